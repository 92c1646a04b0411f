// SPDX-License-Identifier: Apache-2.0

//! Population runs: configuration, presets, and the training loop.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, InitMode, QTable, TdTarget};
use crate::asrn::{Activation, AsrnConfig, AsrnState, NoiseScale};
use crate::env::{env_preset, ArmSpec, EnvSpec, Filtered, RewardFilter};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, trap_duration_stats, ChoiceRule, MetricsFrame, StepRecord, TrapDetector, TrapDurationStats, TrapEvent,
};
use crate::rng::{RngStream, StreamRole};

/// Either a named environment preset or an explicit arm list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<ArmSpec>>,
}

impl EnvConfig {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_owned()),
            arms: None,
        }
    }

    pub fn custom(env: &EnvSpec) -> Self {
        Self {
            preset: None,
            arms: Some(env.arms.clone()),
        }
    }

    pub fn resolve(&self) -> Result<EnvSpec> {
        match (&self.preset, &self.arms) {
            (Some(name), None) => env_preset(name),
            (None, Some(arms)) => EnvSpec::new(arms.clone()),
            (Some(_), Some(_)) => Err(Error::Config("[env] takes either `preset` or `arms`, not both".into())),
            (None, None) => Err(Error::Config("[env] needs `preset` or `arms`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_agents: u32,
    pub n_steps: u64,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub record_every: u64,
    #[serde(default)]
    pub choice_rule: ChoiceRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asrn: Option<AsrnConfig>,
}

fn one() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<EnvSpec> {
        if self.n_agents == 0 {
            return Err(Error::param("n_agents", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be >= 1"));
        }
        let env = self.env.resolve()?;
        self.agent.validate()?;
        if let Some(a) = &self.asrn {
            a.validate()?;
        }
        Ok(env)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Whether step `t` (1-based) is logged: every `record_every`-th step,
    /// plus the final one.
    pub fn is_recorded(&self, t: u64) -> bool {
        t.is_multiple_of(self.record_every) || t == self.n_steps
    }

    pub fn n_recorded(&self) -> u64 {
        self.n_steps.div_ceil(self.record_every)
    }
}

/// Broken-armed bandit learner shared by the `fig1_*` presets.
pub fn broken_armed_agent() -> AgentConfig {
    AgentConfig {
        alpha: 0.05,
        gamma: 0.95,
        epsilon0: 1.0,
        epsilon_decay: 0.001,
        epsilon_min: 0.0,
        init_mode: InitMode::Optimal,
        target: TdTarget::Terminal,
    }
}

/// Learner for the low-but-nonzero boring-variance bandit.
pub fn fig3_agent() -> AgentConfig {
    AgentConfig {
        alpha: 0.1,
        gamma: 0.9,
        ..broken_armed_agent()
    }
}

/// ASRN settings used by the `fig1_asrn` preset.
///
/// A long window keeps the median from collapsing once most grades come
/// from the deterministic arm, and noising at the upper-half RMS grade
/// brings the boring arm's loss up to the interesting arm's.
pub fn preset_asrn() -> AsrnConfig {
    AsrnConfig {
        window_k: 10_000,
        activation_step: Activation::At(1000),
        noise_scale_mode: NoiseScale::InterestingRms,
        ..AsrnConfig::default()
    }
}

pub const FIG1_STEPS: u64 = 20_000;
pub const SIGMA_SWEEP: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

pub const PRESET_NAMES: [&str; 4] = ["fig1_no_asrn", "fig1_asrn", "fig3", "sigma_sweep"];

/// Run configurations for a named preset. `sigma_sweep` expands to one run
/// per boring-arm sigma; every other preset is a single run.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let fig1 = |name: &str, asrn: Option<AsrnConfig>| ExperimentConfig {
        name: name.to_owned(),
        n_agents: 100,
        n_steps: FIG1_STEPS,
        master_seed: 0,
        record_every: 1,
        choice_rule: ChoiceRule::LastAction,
        output_dir: None,
        env: EnvConfig::preset("broken_armed"),
        agent: broken_armed_agent(),
        asrn,
    };
    let fig3 = |name: String, sigma_l: f64, n_agents: u32, n_steps: u64| ExperimentConfig {
        name,
        n_agents,
        n_steps,
        master_seed: 0,
        record_every: 1,
        choice_rule: ChoiceRule::Greedy,
        output_dir: None,
        env: EnvConfig::custom(&EnvSpec::from_pairs(&[(0.0, sigma_l), (1.0, 7.0)]).expect("valid arms")),
        agent: fig3_agent(),
        asrn: None,
    };
    Ok(match name {
        "fig1_no_asrn" => vec![fig1(name, None)],
        "fig1_asrn" => vec![fig1(name, Some(preset_asrn()))],
        "fig3" => {
            let mut c = fig3(name.to_owned(), 0.5, 1, 2000);
            c.env = EnvConfig::preset("fig3");
            vec![c]
        }
        "sigma_sweep" => SIGMA_SWEEP
            .iter()
            .map(|&s| {
                let mut c = fig3(format!("sigma_sweep_{s}"), s, 200, 2000);
                c.record_every = 100;
                c
            })
            .collect(),
        other => return Err(Error::UnknownPreset(other.to_owned())),
    })
}

/// One agent's training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub agent_id: u32,
    pub initial_q: QTable,
    pub records: Vec<StepRecord>,
    /// Trap events over every step, not just the recorded ones.
    pub events: Vec<TrapEvent>,
    pub final_q: QTable,
}

/// Runs agent `agent_index` for `n_steps`.
///
/// Each step: select an arm, draw its reward, pass it through the filter,
/// then take the TD error and Q update on the emitted reward and decay ε.
pub fn run_agent(config: &ExperimentConfig, agent_index: u32) -> Result<Trace> {
    let env = config.validate()?;
    if agent_index >= config.n_agents {
        return Err(Error::param(
            "agent_index",
            format!("{agent_index} >= n_agents {}", config.n_agents),
        ));
    }
    let seed = config.master_seed;
    let idx = u64::from(agent_index);
    let mut agent_rng = RngStream::for_agent(seed, idx, StreamRole::Agent);
    let mut env_rng = RngStream::for_agent(seed, idx, StreamRole::Environment);
    let mut noise_rng = RngStream::for_agent(seed, idx, StreamRole::FilterNoise);

    let mut agent = Agent::new(config.agent, &env, &mut agent_rng)?;
    let mut filter = match config.asrn {
        Some(c) => {
            let mut init_rng = RngStream::for_agent(seed, idx, StreamRole::FilterInit);
            Some(AsrnState::new(c, env.n_arms(), &mut init_rng)?)
        }
        None => None,
    };

    let initial_q = agent.q().clone();
    let mut detector = TrapDetector::new(agent_index);
    detector.observe(0, &initial_q);
    let mut records = Vec::with_capacity(config.n_recorded() as usize);

    for t in 1..=config.n_steps {
        let epsilon = agent.epsilon();
        let action = agent.select_action(&mut agent_rng);
        let raw = env.sample_reward(action, &mut env_rng)?;
        let out = match filter.as_mut() {
            Some(f) => f.filter(raw, action, t, &mut noise_rng),
            None => Filtered::passthrough(raw),
        };
        let delta = agent.q_update(action, out.emitted)?;
        agent.decay_epsilon();
        detector.observe(t, agent.q());
        if config.is_recorded(t) {
            records.push(StepRecord {
                step: t,
                agent_id: agent_index,
                action,
                raw_reward: raw,
                emitted_reward: out.emitted,
                epsilon,
                delta,
                interest: out.interest,
                i_med: out.median_interest,
                q: agent.q().clone(),
            });
        }
    }

    Ok(Trace {
        agent_id: agent_index,
        initial_q,
        records,
        events: detector.finish(),
        final_q: agent.q().clone(),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by agent id.
    pub traces: Vec<Trace>,
    pub frames: Vec<MetricsFrame>,
    /// Ordered by agent id, then entry step.
    pub events: Vec<TrapEvent>,
}

impl ExperimentResult {
    /// Greedy right fraction after the last step.
    pub fn final_right_fraction(&self) -> f64 {
        crate::metrics::right_fraction(self.traces.iter().map(|t| &t.final_q)).unwrap_or(0.0)
    }
}

/// Runs every agent, on `threads` workers (`None` for the global pool).
/// The result does not depend on the worker count.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    config.validate()?;
    let work = || -> Result<Vec<Trace>> {
        (0..config.n_agents)
            .into_par_iter()
            .map(|i| run_agent(config, i))
            .collect()
    };
    let traces = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(assemble(config.clone(), traces))
}

fn assemble(config: ExperimentConfig, traces: Vec<Trace>) -> ExperimentResult {
    let slices: Vec<&[StepRecord]> = traces.iter().map(|t| t.records.as_slice()).collect();
    let frames = aggregate(&slices, config.choice_rule);
    let events = traces.iter().flat_map(|t| t.events.iter().copied()).collect();
    ExperimentResult {
        config,
        traces,
        frames,
        events,
    }
}

/// Trap statistics of one boring-arm sigma in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sigma_l: f64,
    pub stats: TrapDurationStats,
    /// Share of agents with at least one trap that was entered and left.
    pub exited_fraction: f64,
}

/// Runs the low-variance bandit (`mu = [0, 1]`, `sigma_r = 7`) once per
/// boring-arm sigma with `n_agents` seeds and `n_steps` steps each, and
/// summarizes trap durations censored at `n_steps`.
pub fn trap_sweep(sigmas: &[f64], n_agents: u32, n_steps: u64, master_seed: u64) -> Result<Vec<SweepPoint>> {
    sigmas
        .iter()
        .map(|&sigma_l| {
            let mut cfg = preset("fig3")?.remove(0);
            cfg.name = format!("sigma_sweep_{sigma_l}");
            cfg.env = EnvConfig::custom(&EnvSpec::from_pairs(&[(0.0, sigma_l), (1.0, 7.0)])?);
            cfg.n_agents = n_agents;
            cfg.n_steps = n_steps;
            cfg.master_seed = master_seed;
            cfg.record_every = n_steps.max(1);
            let result = run_experiment(&cfg, None)?;
            let exited = result
                .traces
                .iter()
                .filter(|t| t.events.iter().any(|e| e.exit_step.is_some()))
                .count();
            Ok(SweepPoint {
                sigma_l,
                stats: trap_duration_stats(&result.events, n_steps),
                exited_fraction: exited as f64 / n_agents as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ExperimentConfig {
        let mut c = preset(name).unwrap().remove(0);
        c.n_agents = 4;
        c.n_steps = 300;
        c
    }

    #[test]
    fn zero_steps_keeps_initial_snapshot() {
        let mut c = small("fig1_no_asrn");
        c.n_steps = 0;
        let t = run_agent(&c, 0).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.initial_q, t.final_q);
        assert!((t.initial_q[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_without_reward_noise() {
        let mut c = small("fig1_no_asrn");
        c.env = EnvConfig::custom(&EnvSpec::from_pairs(&[(0.0, 0.0), (1.0, 0.0)]).unwrap());
        c.agent.epsilon0 = 0.0;
        c.agent.target = TdTarget::Bootstrap;
        let t = run_agent(&c, 1).unwrap();
        assert!(t.records.iter().all(|r| r.q == t.initial_q && r.action == 1));
    }

    #[test]
    fn same_seed_same_trace() {
        let c = small("fig1_asrn");
        assert_eq!(run_agent(&c, 2).unwrap(), run_agent(&c, 2).unwrap());
        assert_ne!(run_agent(&c, 2).unwrap().records, run_agent(&c, 3).unwrap().records);
    }

    #[test]
    fn agent_index_bounds() {
        let c = small("fig1_no_asrn");
        assert!(run_agent(&c, 4).is_err());
    }

    #[test]
    fn recorded_step_count() {
        let mut c = small("fig1_no_asrn");
        c.n_steps = 10;
        c.record_every = 3;
        let steps: Vec<u64> = run_agent(&c, 0).unwrap().records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![3, 6, 9, 10]);
        assert_eq!(c.n_recorded(), 4);
    }

    #[test]
    fn single_agent_experiment_matches_run_agent() {
        let mut c = small("fig3");
        c.n_agents = 1;
        let r = run_experiment(&c, Some(1)).unwrap();
        let t = run_agent(&c, 0).unwrap();
        assert_eq!(r.traces, vec![t.clone()]);
        assert_eq!(r.events, t.events);
        assert_eq!(r.frames.len(), t.records.len());
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(n)) if n == "nope"));
    }

    #[test]
    fn sweep_expands() {
        let runs = preset("sigma_sweep").unwrap();
        assert_eq!(runs.len(), 4);
        let sigmas: Vec<f64> = runs.iter().map(|c| c.env.resolve().unwrap().arms[0].sigma()).collect();
        assert_eq!(sigmas, SIGMA_SWEEP.to_vec());
    }

    #[test]
    fn toml_roundtrip_and_errors() {
        for name in PRESET_NAMES {
            for c in preset(name).unwrap() {
                assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
            }
        }
        assert!(ExperimentConfig::from_toml("name = 3").is_err());
        let mut c = small("fig1_no_asrn");
        c.env.arms = Some(vec![]);
        assert!(c.validate().is_err());
        c.env = EnvConfig {
            preset: None,
            arms: None,
        };
        assert!(c.validate().is_err());
    }
}
