pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod payoff;
pub mod riskfn;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
