// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Errors raised by the simulation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("arm index {arm} out of range for a {n_arms}-armed bandit")]
    ArmOutOfRange { arm: usize, n_arms: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed config: {0}")]
    Config(String),

    #[error("empty population")]
    EmptyPopulation,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
