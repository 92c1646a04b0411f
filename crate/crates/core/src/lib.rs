// SPDX-License-Identifier: Apache-2.0

//! Tabular Q-learning on bandits whose arms differ in reward variance, and an
//! adaptive symmetric reward-noising filter that equalizes that variance.
//!
//! Modules, bottom-up: [`rng`] (seeded streams), [`env`] (Gaussian arms),
//! [`agent`] (ε-greedy Q-learning), [`asrn`] (the noising filter),
//! [`metrics`] (population curves, trap detection, the converged-loss
//! oracle), [`experiment`] (presets and population runs) and [`output`]
//! (CSV and SVG files).

pub mod agent;
pub mod asrn;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod rng;

pub use agent::{Agent, AgentConfig, InitMode, Preference, QTable, TdTarget};
pub use asrn::{Activation, AsrnConfig, AsrnState, InterestWindow, NoiseScale, PredictorEnsemble};
pub use env::{broken_armed_bandit, fig3_bandit, ArmSpec, EnvSpec, Filtered, IdentityFilter, RewardFilter};
pub use error::{Error, Result};
pub use experiment::{preset, run_agent, run_experiment, EnvConfig, ExperimentConfig, ExperimentResult, Trace};
pub use metrics::{ChoiceRule, MetricsFrame, StepRecord, TrapEvent};
pub use rng::{NormalParams, RngStream, StreamRole};
