use thiserror::Error;

use crate::network::Reservoir;

/// Errors produced by the model, controller and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value} ({constraint})")]
    Domain {
        what: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("gridlock in reservoir {reservoir}: density {density:.3} exceeds jam density {jam:.3}")]
    Gridlock {
        reservoir: Reservoir,
        density: f64,
        jam: f64,
    },

    #[error("infeasible steady state: demand {demand:.1} veh/h exceeds maximum discharge {capacity:.1} veh/h")]
    Infeasible { demand: f64, capacity: f64 },

    #[error("forward equations leak {leaked:.3e} of probability mass past n_max = {n_max}; increase n_max")]
    TailMass { leaked: f64, n_max: usize },

    #[error("too many failed runs: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scenario parsing and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("invalid value at `{path}`: {constraint}")]
    Invariant { path: String, constraint: String },
}

impl ConfigError {
    pub(crate) fn invariant(path: impl Into<String>, constraint: impl Into<String>) -> Self {
        ConfigError::Invariant {
            path: path.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_domain(
    ok: bool,
    what: &'static str,
    value: f64,
    constraint: &'static str,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value,
            constraint,
        })
    }
}
