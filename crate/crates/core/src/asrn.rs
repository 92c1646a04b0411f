// SPDX-License-Identifier: Apache-2.0

//! Adaptive symmetric reward noising.
//!
//! An ensemble of randomly initialized per-arm reward predictors grades each
//! step by its mean absolute prediction error (the interest grade `I_t`). The
//! last `K` grades are kept in a window. A step whose grade is below the
//! window median gets zero-mean Gaussian noise added to its reward, so arms
//! whose rewards are predictable start to look as noisy as the rest while
//! their mean stays put. Predictors always learn from the raw reward.

use std::collections::VecDeque;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::env::{Filtered, RewardFilter};
use crate::error::{Error, Result};
use crate::rng::{sample_normal, NormalParams, RngStream};

/// `1 / Phi^{-1}(3/4)`: turns a median absolute deviation into a Gaussian
/// standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// How the standard deviation `s` of the injected noise is chosen on a
/// below-median step with grade `I_t` and window median `I_med`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `s = I_med`
    #[default]
    Median,
    /// `s = sqrt(max(0, I_med^2 - I_t^2))`
    VarianceMatching,
    /// `s = I_t`
    Literal,
    /// `s = MAD_TO_SIGMA * I_med`, the Gaussian std whose median absolute
    /// deviation is `I_med`.
    RobustSigma,
    /// `s = U`, the root mean square of the grades at or above the median.
    InterestingRms,
    /// `s = sqrt(max(0, U^2 - I_t^2))`
    InterestingRmsMatching,
}

impl NoiseScale {
    /// Whether [`NoiseScale::scale`] reads its `upper_rms` argument.
    pub fn uses_upper_rms(self) -> bool {
        matches!(self, NoiseScale::InterestingRms | NoiseScale::InterestingRmsMatching)
    }

    pub fn scale(self, interest: f64, median: f64, upper_rms: f64) -> f64 {
        match self {
            NoiseScale::Median => median,
            NoiseScale::VarianceMatching => (median * median - interest * interest).max(0.0).sqrt(),
            NoiseScale::Literal => interest,
            NoiseScale::RobustSigma => MAD_TO_SIGMA * median,
            NoiseScale::InterestingRms => upper_rms,
            NoiseScale::InterestingRmsMatching => (upper_rms * upper_rms - interest * interest).max(0.0).sqrt(),
        }
    }
}

/// Step from which noising is allowed. Serialized as an integer or `"never"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    At(u64),
    Never,
}

impl Activation {
    pub fn is_active(self, step: u64) -> bool {
        match self {
            Activation::At(s) => step >= s,
            Activation::Never => false,
        }
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Activation::At(v) => s.serialize_u64(*v),
            Activation::Never => s.serialize_str("never"),
        }
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Activation::At(v)),
            Raw::Word(w) if w == "never" => Ok(Activation::Never),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "activation_step must be an integer or \"never\", got `{w}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrnConfig {
    pub ensemble_size: usize,
    pub window_k: usize,
    pub predictor_lr: f64,
    pub predictor_init_sigma: f64,
    pub activation_step: Activation,
    pub noise_scale_mode: NoiseScale,
}

impl Default for AsrnConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 5,
            window_k: 1000,
            predictor_lr: 0.1,
            predictor_init_sigma: 1.0,
            activation_step: Activation::At(0),
            noise_scale_mode: NoiseScale::Median,
        }
    }
}

impl AsrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::param("ensemble_size", "must be >= 1"));
        }
        if self.window_k == 0 {
            return Err(Error::param("window_k", "must be >= 1"));
        }
        if !(self.predictor_lr > 0.0 && self.predictor_lr <= 1.0) {
            return Err(Error::param(
                "predictor_lr",
                format!("must lie in (0, 1], got {}", self.predictor_lr),
            ));
        }
        if !self.predictor_init_sigma.is_finite() || self.predictor_init_sigma < 0.0 {
            return Err(Error::param("predictor_init_sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Grades required before the median is trusted.
    pub fn warmup(&self) -> usize {
        self.window_k.min(100)
    }
}

/// Per-predictor, per-arm running reward estimates.
#[derive(Debug, Clone)]
pub struct PredictorEnsemble {
    n_arms: usize,
    estimates: Vec<f64>,
    rates: Vec<f64>,
}

impl PredictorEnsemble {
    /// Learning rates spread evenly over `[0.5, 1.5] * base_lr`, capped at 1.
    pub fn learning_rates(size: usize, base_lr: f64) -> Vec<f64> {
        if size == 1 {
            return vec![base_lr];
        }
        (0..size)
            .map(|p| {
                let f = 0.5 + p as f64 / (size - 1) as f64;
                (f * base_lr).min(1.0)
            })
            .collect()
    }

    pub fn new(config: &AsrnConfig, n_arms: usize, rng: &mut RngStream) -> Result<Self> {
        let init = NormalParams::new(0.0, config.predictor_init_sigma)?;
        let estimates = (0..config.ensemble_size * n_arms)
            .map(|_| sample_normal(rng, init))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_arms,
            estimates,
            rates: Self::learning_rates(config.ensemble_size, config.predictor_lr),
        })
    }

    pub fn size(&self) -> usize {
        self.rates.len()
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn estimate(&self, predictor: usize, arm: usize) -> f64 {
        self.estimates[predictor * self.n_arms + arm]
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Mean absolute error of the ensemble's predictions for `arm`.
    pub fn mean_abs_error(&self, arm: usize, reward: f64) -> f64 {
        let total: f64 = (0..self.size()).map(|p| (self.estimate(p, arm) - reward).abs()).sum();
        total / self.size() as f64
    }

    pub fn learn(&mut self, arm: usize, reward: f64) {
        for (p, &lr) in self.rates.iter().enumerate() {
            let e = &mut self.estimates[p * self.n_arms + arm];
            *e += lr * (reward - *e);
        }
    }
}

/// The most recent `capacity` interest grades, kept sorted alongside their
/// arrival order so the median is O(1) to read.
#[derive(Debug, Clone)]
pub struct InterestWindow {
    capacity: usize,
    order: VecDeque<f64>,
    sorted: Vec<f64>,
    /// Sum of squares of `sorted[len / 2..]`, updated per push and
    /// recomputed exactly every `capacity` pushes.
    upper_sq: f64,
    since_resync: usize,
}

impl InterestWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            order: VecDeque::with_capacity(capacity + 1),
            sorted: Vec::with_capacity(capacity + 1),
            upper_sq: 0.0,
            since_resync: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Grades in arrival order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.order.iter().copied()
    }

    pub fn push(&mut self, grade: f64) {
        debug_assert!(grade >= 0.0 && grade.is_finite());
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                let i = self.sorted.partition_point(|&v| v < old);
                self.remove_at(i);
            }
        }
        self.order.push_back(grade);
        let i = self.sorted.partition_point(|&v| v < grade);
        self.insert_at(i, grade);

        self.since_resync += 1;
        if self.since_resync >= self.capacity {
            let n = self.sorted.len();
            self.upper_sq = self.sorted[n / 2..].iter().map(|v| v * v).sum();
            self.since_resync = 0;
        }
    }

    // The upper half is `sorted[n / 2..]`. Each edit moves at most one
    // element across that boundary.
    fn insert_at(&mut self, i: usize, g: f64) {
        let n = self.sorted.len();
        let (b, b_new) = (n / 2, n.div_ceil(2));
        let sq = |v: f64| v * v;
        if n.is_multiple_of(2) {
            self.upper_sq += if i < b_new { sq(self.sorted[b - 1]) } else { sq(g) };
        } else if i >= b_new {
            self.upper_sq += sq(g) - sq(self.sorted[b]);
        }
        self.sorted.insert(i, g);
    }

    fn remove_at(&mut self, i: usize) {
        let n = self.sorted.len();
        let (b, b_new) = (n / 2, (n - 1) / 2);
        let sq = |v: f64| v * v;
        if n.is_multiple_of(2) {
            if i >= b_new {
                self.upper_sq += sq(self.sorted[b - 1]) - sq(self.sorted[i]);
            }
        } else if i < b_new {
            self.upper_sq -= sq(self.sorted[b]);
        } else {
            self.upper_sq -= sq(self.sorted[i]);
        }
        self.sorted.remove(i);
    }

    /// Root mean square of the upper half of the sorted window (the middle
    /// element included for odd counts). Zero when empty.
    pub fn upper_rms(&self) -> f64 {
        let n = self.sorted.len();
        if n == 0 {
            return 0.0;
        }
        (self.upper_sq.max(0.0) / (n - n / 2) as f64).sqrt()
    }

    /// Median of the window; mean of the middle pair for even counts.
    /// An empty window yields `+inf`, which never triggers noise.
    pub fn median(&self) -> f64 {
        let n = self.sorted.len();
        if n == 0 {
            f64::INFINITY
        } else if n % 2 == 1 {
            self.sorted[n / 2]
        } else {
            0.5 * (self.sorted[n / 2 - 1] + self.sorted[n / 2])
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsrnState {
    config: AsrnConfig,
    ensemble: PredictorEnsemble,
    window: InterestWindow,
    step_count: u64,
}

impl AsrnState {
    pub fn new(config: AsrnConfig, n_arms: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        if n_arms == 0 {
            return Err(Error::param("n_arms", "must be >= 1"));
        }
        Ok(Self {
            ensemble: PredictorEnsemble::new(&config, n_arms, rng)?,
            window: InterestWindow::new(config.window_k),
            config,
            step_count: 0,
        })
    }

    pub fn config(&self) -> &AsrnConfig {
        &self.config
    }

    pub fn ensemble(&self) -> &PredictorEnsemble {
        &self.ensemble
    }

    pub fn window(&self) -> &InterestWindow {
        &self.window
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm < self.ensemble.n_arms() {
            Ok(())
        } else {
            Err(Error::ArmOutOfRange {
                arm,
                n_arms: self.ensemble.n_arms(),
            })
        }
    }

    /// `I_t`, computed against the current (pre-update) predictors.
    pub fn interest_grade(&self, arm: usize, raw_reward: f64) -> Result<f64> {
        self.check_arm(arm)?;
        Ok(self.ensemble.mean_abs_error(arm, raw_reward))
    }

    /// Trains every predictor on `raw_reward` for `arm` and records the
    /// step's grade in the window.
    pub fn update_predictors(&mut self, arm: usize, raw_reward: f64) -> Result<()> {
        let grade = self.interest_grade(arm, raw_reward)?;
        self.record(arm, raw_reward, grade);
        Ok(())
    }

    fn record(&mut self, arm: usize, raw_reward: f64, grade: f64) {
        self.window.push(grade);
        self.ensemble.learn(arm, raw_reward);
        self.step_count += 1;
    }

    /// Window median, `+inf` when empty.
    pub fn median_interest(&self) -> f64 {
        self.window.median()
    }

    /// Median used for the noising decision: `+inf` until the warm-up
    /// count of grades has been collected.
    pub fn effective_median(&self) -> f64 {
        if self.window.len() < self.config.warmup() {
            f64::INFINITY
        } else {
            self.window.median()
        }
    }

    /// Applies the filter to one raw reward and then trains on it.
    pub fn filter_reward(&mut self, arm: usize, raw_reward: f64, rng: &mut RngStream) -> Result<Filtered> {
        if !raw_reward.is_finite() {
            return Err(Error::param("raw_reward", "must be finite"));
        }
        let grade = self.interest_grade(arm, raw_reward)?;
        let median = self.effective_median();
        let mut emitted = raw_reward;
        if self.config.activation_step.is_active(self.step_count) && median.is_finite() && grade < median {
            let mode = self.config.noise_scale_mode;
            let upper = if mode.uses_upper_rms() {
                self.window.upper_rms()
            } else {
                0.0
            };
            let s = mode.scale(grade, median, upper);
            if s > 0.0 {
                emitted = raw_reward + s * rng.standard_normal();
            }
        }
        self.record(arm, raw_reward, grade);
        Ok(Filtered {
            emitted,
            interest: Some(grade),
            median_interest: median.is_finite().then_some(median),
        })
    }
}

impl RewardFilter for AsrnState {
    fn filter(&mut self, raw: f64, arm: usize, _step: u64, rng: &mut RngStream) -> Filtered {
        self.filter_reward(arm, raw, rng)
            .expect("arm and reward validated by the driving loop")
    }
}
