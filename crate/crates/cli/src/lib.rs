//! Experiment drivers and output plumbing for the penalty-limit Galerkin
//! study: configuration parsing, CSV/VTK/checkpoint emission, and the five
//! experiments behind the `penalimit` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, Result};
