// SPDX-License-Identifier: Apache-2.0

//! Single-state bandits with Gaussian arms, and the reward-filter hook.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_normal, NormalParams, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    #[serde(flatten)]
    pub params: NormalParams,
}

impl ArmSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        Ok(Self {
            params: NormalParams::new(mu, sigma)?,
        })
    }

    pub fn mean(&self) -> f64 {
        self.params.mu
    }

    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }
}

/// A bandit with at least two arms. Arm order indexes actions.
///
/// For two-armed bandits arm 0 is "left" (the boring arm) and arm 1 is
/// "right" (the interesting arm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub arms: Vec<ArmSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
}

impl EnvSpec {
    pub fn new(arms: Vec<ArmSpec>) -> Result<Self> {
        let names = if arms.len() == 2 {
            vec!["left".to_owned(), "right".to_owned()]
        } else {
            Vec::new()
        };
        let env = Self { arms, names };
        env.validate()?;
        Ok(env)
    }

    /// Builds a bandit from `(mu, sigma)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let arms = pairs
            .iter()
            .map(|&(mu, sigma)| ArmSpec::new(mu, sigma))
            .collect::<Result<Vec<_>>>()?;
        Self::new(arms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.len() < 2 {
            return Err(Error::param(
                "arms",
                format!("need at least 2 arms, got {}", self.arms.len()),
            ));
        }
        if !self.names.is_empty() && self.names.len() != self.arms.len() {
            return Err(Error::param("names", "one label per arm"));
        }
        self.arms.iter().try_for_each(|a| a.params.validate())
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arm(&self, arm: usize) -> Result<&ArmSpec> {
        self.arms.get(arm).ok_or(Error::ArmOutOfRange {
            arm,
            n_arms: self.arms.len(),
        })
    }

    /// Index of the arm labelled `name`, or a numeric index.
    pub fn arm_by_name(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Ok(i);
        }
        let i: usize = name
            .parse()
            .map_err(|_| Error::param("arm", format!("unknown arm `{name}`")))?;
        self.arm(i).map(|_| i)
    }

    /// One reward draw from `arm`.
    pub fn sample_reward(&self, arm: usize, rng: &mut RngStream) -> Result<f64> {
        sample_normal(rng, self.arm(arm)?.params)
    }
}

/// Left arm pays exactly 0; right arm pays `N(1, 2.5^2)`.
pub fn broken_armed_bandit() -> EnvSpec {
    EnvSpec::from_pairs(&[(0.0, 0.0), (1.0, 2.5)]).expect("valid preset")
}

/// Low-but-nonzero boring variance: left `N(0, 0.5^2)`, right `N(1, 7^2)`.
pub fn fig3_bandit() -> EnvSpec {
    EnvSpec::from_pairs(&[(0.0, 0.5), (1.0, 7.0)]).expect("valid preset")
}

/// Named environment presets.
pub fn env_preset(name: &str) -> Result<EnvSpec> {
    match name {
        "broken_armed" => Ok(broken_armed_bandit()),
        "fig3" => Ok(fig3_bandit()),
        other => Err(Error::UnknownPreset(other.to_owned())),
    }
}

/// What a reward filter hands back to the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filtered {
    pub emitted: f64,
    /// Interest grade of this step, when the filter computes one.
    pub interest: Option<f64>,
    /// Median interest in effect for this step, when the filter tracks one.
    pub median_interest: Option<f64>,
}

impl Filtered {
    pub fn passthrough(reward: f64) -> Self {
        Self {
            emitted: reward,
            interest: None,
            median_interest: None,
        }
    }
}

/// Transforms the raw reward before the learner sees it.
///
/// Any filter must leave the long-run mean reward of every arm unchanged.
pub trait RewardFilter {
    fn filter(&mut self, raw: f64, arm: usize, step: u64, rng: &mut RngStream) -> Filtered;
}

/// Returns the raw reward unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFilter;

impl RewardFilter for IdentityFilter {
    fn filter(&mut self, raw: f64, _arm: usize, _step: u64, _rng: &mut RngStream) -> Filtered {
        Filtered::passthrough(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broken_armed_parameters() {
        let env = broken_armed_bandit();
        let pairs: Vec<(f64, f64)> = env.arms.iter().map(|a| (a.mean(), a.sigma())).collect();
        assert_eq!(pairs, vec![(0.0, 0.0), (1.0, 2.5)]);
        assert!(env.validate().is_ok());
        assert_eq!(env.arm_by_name("right").unwrap(), 1);
    }

    #[test]
    fn fig3_parameters() {
        let env = fig3_bandit();
        let pairs: Vec<(f64, f64)> = env.arms.iter().map(|a| (a.mean(), a.sigma())).collect();
        assert_eq!(pairs, vec![(0.0, 0.5), (1.0, 7.0)]);
    }

    #[test]
    fn left_arm_is_exactly_zero() {
        let env = broken_armed_bandit();
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            assert_eq!(env.sample_reward(0, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn right_arm_mean() {
        let env = broken_armed_bandit();
        let mut rng = RngStream::new(4);
        let n = 100_000;
        let mean = (0..n).map(|_| env.sample_reward(1, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() <= 0.03, "mean {mean}");
    }

    #[test]
    fn arm_out_of_range() {
        let env = broken_armed_bandit();
        let err = env.sample_reward(2, &mut RngStream::new(0)).unwrap_err();
        assert!(matches!(err, Error::ArmOutOfRange { arm: 2, n_arms: 2 }));
    }

    #[test]
    fn rejects_single_arm_and_bad_sigma() {
        assert!(EnvSpec::from_pairs(&[(0.0, 1.0)]).is_err());
        assert!(EnvSpec::from_pairs(&[(0.0, 1.0), (1.0, -1.0)]).is_err());
        assert!(env_preset("nope").is_err());
    }

    #[test]
    fn identity_filter_passes_through() {
        let mut f = IdentityFilter;
        let mut rng = RngStream::new(0);
        for (i, r) in [-3.5, 0.0, 1e9, 2.25].into_iter().enumerate() {
            assert_eq!(f.filter(r, i % 2, i as u64, &mut rng).emitted, r);
        }
    }

    #[test]
    fn n_armed_generalization() {
        let env = EnvSpec::from_pairs(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_eq!(env.n_arms(), 3);
        assert!(env.names.is_empty());
        assert_eq!(env.sample_reward(2, &mut RngStream::new(0)).unwrap(), 2.0);
    }
}
