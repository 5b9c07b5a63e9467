//! Files and command line for the FitNets toolkit: IDX datasets, the
//! architecture text format, binary checkpoints, run configurations and
//! reports. The numerics live in `fitnets_core`.

pub mod archfile;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod idx;
pub mod report;

pub use error::{FitError, Result};
