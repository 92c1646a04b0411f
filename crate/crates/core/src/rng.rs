// SPDX-License-Identifier: Apache-2.0

//! Seeded random streams and Gaussian sampling.
//!
//! Every stream is a ChaCha8 generator seeded from a single `u64`. Child
//! seeds are derived with [`derive_seed`], which feeds
//! `master + (index + 1) * 0x9E3779B97F4A7C15` through the SplitMix64
//! finalizer. The finalizer is a bijection on `u64` and the pre-image is
//! injective in `index`, so distinct indices under one master always map to
//! distinct child seeds.
//!
//! Each simulated agent owns four sub-streams, one per [`StreamRole`]. The
//! reward filter draws from its own streams, so switching it on or off never
//! shifts the agent's exploration draws or the environment's reward draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `master`. Injective in `index`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64_mix(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Which consumer a per-agent sub-stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Q-table initialization and ε-greedy draws.
    Agent = 0,
    /// Arm reward draws.
    Environment = 1,
    /// Random initialization of the predictor ensemble.
    FilterInit = 2,
    /// Injected reward noise.
    FilterNoise = 3,
}

/// A deterministic, single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream for child `index` of `master`.
    pub fn derive(master: u64, index: u64) -> Self {
        Self::new(derive_seed(master, index))
    }

    /// Sub-stream `role` of agent `agent_index` in a run seeded with `master`.
    pub fn for_agent(master: u64, agent_index: u64, role: StreamRole) -> Self {
        Self::derive(derive_seed(master, agent_index), role as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// Parameters of a Gaussian, `N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let p = Self { mu, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::param("mu", format!("must be finite, got {}", self.mu)));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::param(
                "sigma",
                format!("must be finite and >= 0, got {}", self.sigma),
            ));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// One draw from `N(mu, sigma^2)`.
///
/// `sigma == 0` returns `mu` exactly and consumes no randomness.
pub fn sample_normal(rng: &mut RngStream, params: NormalParams) -> Result<f64> {
    params.validate()?;
    if params.sigma == 0.0 {
        return Ok(params.mu);
    }
    Ok(params.mu + params.sigma * rng.standard_normal())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(0);
        let mut b = RngStream::new(0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(0);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(1);
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a[0], b[0]);
        assert_ne!(a, b);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        for master in [0u64, 1, 42, u64::MAX] {
            let seeds: HashSet<u64> = (0..100).map(|i| derive_seed(master, i)).collect();
            assert_eq!(seeds.len(), 100);
        }
    }

    #[test]
    fn agent_roles_get_distinct_streams() {
        let seeds: HashSet<u64> = [
            StreamRole::Agent,
            StreamRole::Environment,
            StreamRole::FilterInit,
            StreamRole::FilterNoise,
        ]
        .iter()
        .map(|&r| RngStream::for_agent(7, 3, r).seed())
        .collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn degenerate_normal_is_exact_and_consumes_nothing() {
        let mut rng = RngStream::new(5);
        let mut fresh = RngStream::new(5);
        let p = NormalParams::new(0.0, 0.0).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_normal(&mut rng, p).unwrap(), 0.0);
        }
        assert_eq!(rng.next_u64(), fresh.next_u64());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(NormalParams::new(f64::NAN, 1.0).is_err());
        assert!(NormalParams::new(0.0, -1.0).is_err());
        assert!(NormalParams::new(0.0, f64::INFINITY).is_err());
        let bad = NormalParams { mu: 0.0, sigma: -0.5 };
        assert!(sample_normal(&mut RngStream::new(0), bad).is_err());
    }

    #[test]
    fn broken_arm_moments() {
        // 1e5 draws of N(1, 2.5^2): mean se = 0.0079, variance se ~ 0.028.
        let mut rng = RngStream::new(11);
        let p = NormalParams::new(1.0, 2.5).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| sample_normal(&mut rng, p).unwrap()).collect();
        let (mean, var) = moments(&xs);
        assert!((mean - 1.0).abs() <= 0.03, "mean {mean}");
        assert!((var - 6.25).abs() <= 0.2, "var {var}");
    }

    #[test]
    fn moment_grid() {
        let mut rng = RngStream::new(99);
        for &(mu, sigma) in &[(0.0, 0.0), (-3.0, 0.5), (0.0, 1.0), (10.0, 7.0)] {
            let p = NormalParams::new(mu, sigma).unwrap();
            let xs: Vec<f64> = (0..50_000).map(|_| sample_normal(&mut rng, p).unwrap()).collect();
            let (mean, var) = moments(&xs);
            let n = xs.len() as f64;
            assert!((mean - mu).abs() <= 4.0 * sigma / n.sqrt() + 1e-12);
            // variance of s^2 is 2 sigma^4 / (n - 1)
            let var_se = (2.0 * sigma.powi(4) / (n - 1.0)).sqrt();
            assert!((var - sigma * sigma).abs() <= 4.0 * var_se + 1e-12);
        }
    }
}
