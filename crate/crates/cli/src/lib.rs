//! Experiment runner for the `fadingmem` simulator: TOML configs, parallel
//! sweeps, CSV/JSON artifacts and the acceptance suite.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod harness;
pub mod output;

use fadingmem::estimators::EstimateError;
use fadingmem::fluid::FluidError;
use fadingmem::theory::TheoryError;
use fadingmem::{ModelError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

impl CliError {
    /// Process exit status: 2 for bad input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
