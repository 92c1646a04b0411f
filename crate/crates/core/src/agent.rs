// SPDX-License-Identifier: Apache-2.0

//! Tabular Q-learning on a single-state bandit.

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::{sample_normal, RngStream};

/// How the Q-table is filled before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `q[a] = mu_a / (1 - gamma)`, the discounted value of always pulling `a`.
    Optimal,
    /// `q[a] ~ N(mu_a, sigma_a^2)`, one draw per arm.
    IidSample,
    /// Every entry set to the same value.
    Constant(f64),
}

/// The learning target a pulled arm is moved toward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdTarget {
    /// `r + gamma * max_a q[a]`: the single state is its own successor.
    #[default]
    Bootstrap,
    /// `r`: every pull is a terminal one-step episode.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    /// Per-step multiplicative decay: `eps <- eps * (1 - epsilon_decay)`.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub init_mode: InitMode,
    #[serde(default)]
    pub target: TdTarget,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 0.95,
            epsilon0: 1.0,
            epsilon_decay: 0.001,
            epsilon_min: 0.0,
            init_mode: InitMode::Optimal,
            target: TdTarget::Bootstrap,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::param("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(Error::param(
                "epsilon0",
                format!("must lie in [0, 1], got {}", self.epsilon0),
            ));
        }
        if !(self.epsilon_decay >= 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::param(
                "epsilon_decay",
                format!("must lie in [0, 1], got {}", self.epsilon_decay),
            ));
        }
        if !(0.0..=self.epsilon0).contains(&self.epsilon_min) {
            return Err(Error::param(
                "epsilon_min",
                format!("must lie in [0, epsilon0], got {}", self.epsilon_min),
            ));
        }
        if let InitMode::Constant(c) = self.init_mode {
            if !c.is_finite() {
                return Err(Error::param("init_mode", "constant must be finite"));
            }
        }
        Ok(())
    }
}

/// Which of the first two arms an agent greedily prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preference {
    Left,
    Right,
    Tie,
}

/// One value estimate per arm. `q[0]` is Q_l, `q[1]` is Q_r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable(pub Vec<f64>);

impl QTable {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Strict comparison of `q[1]` against `q[0]`.
    pub fn preference(&self) -> Preference {
        let (l, r) = (self.0[0], self.0[1]);
        if r > l {
            Preference::Right
        } else if l > r {
            Preference::Left
        } else {
            Preference::Tie
        }
    }
}

impl std::ops::Index<usize> for QTable {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    q: QTable,
    epsilon: f64,
    config: AgentConfig,
    step_count: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, env: &EnvSpec, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let q = match config.init_mode {
            InitMode::Optimal => env.arms.iter().map(|a| a.mean() / (1.0 - config.gamma)).collect(),
            InitMode::IidSample => env
                .arms
                .iter()
                .map(|a| sample_normal(rng, a.params))
                .collect::<Result<Vec<_>>>()?,
            InitMode::Constant(c) => vec![c; env.n_arms()],
        };
        Ok(Self {
            q: QTable(q),
            epsilon: config.epsilon0,
            config,
            step_count: 0,
        })
    }

    /// Agent with an explicit table, for experiments that start mid-training.
    pub fn with_table(config: AgentConfig, q: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if q.len() < 2 || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("q", "need at least 2 finite entries"));
        }
        Ok(Self {
            q: QTable(q),
            epsilon: config.epsilon0,
            config,
            step_count: 0,
        })
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(self.config.epsilon_min, self.config.epsilon0);
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn n_arms(&self) -> usize {
        self.q.len()
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm < self.n_arms() {
            Ok(())
        } else {
            Err(Error::ArmOutOfRange {
                arm,
                n_arms: self.n_arms(),
            })
        }
    }

    /// ε-greedy choice; ties among maximal entries are broken uniformly.
    ///
    /// Always consumes one uniform draw, plus one index draw when exploring
    /// or when the maximum is shared.
    pub fn select_action(&self, rng: &mut RngStream) -> usize {
        let n = self.n_arms();
        if rng.uniform() < self.epsilon {
            return rng.index(n);
        }
        let best = self.q.max();
        let mut ties = self.q.0.iter().enumerate().filter(|(_, &v)| v == best).map(|(i, _)| i);
        let first = ties.next().unwrap_or(0);
        let rest: Vec<usize> = ties.collect();
        if rest.is_empty() {
            first
        } else {
            let k = rng.index(rest.len() + 1);
            if k == 0 {
                first
            } else {
                rest[k - 1]
            }
        }
    }

    pub fn target(&self, reward: f64) -> f64 {
        match self.config.target {
            TdTarget::Bootstrap => reward + self.config.gamma * self.q.max(),
            TdTarget::Terminal => reward,
        }
    }

    /// `q[arm] - target(reward)`, with no state change.
    pub fn td_error(&self, arm: usize, reward: f64) -> Result<f64> {
        self.check_arm(arm)?;
        Ok(self.q[arm] - self.target(reward))
    }

    /// Moves `q[arm]` a fraction `alpha` toward the target computed from the
    /// pre-update table. Returns the TD error of the update.
    pub fn q_update(&mut self, arm: usize, reward: f64) -> Result<f64> {
        if !reward.is_finite() {
            return Err(Error::param("reward", format!("must be finite, got {reward}")));
        }
        let delta = self.td_error(arm, reward)?;
        self.q.0[arm] -= self.config.alpha * delta;
        self.step_count += 1;
        Ok(delta)
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * (1.0 - self.config.epsilon_decay)).max(self.config.epsilon_min);
    }
}
