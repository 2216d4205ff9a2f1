//! Numerical lab for self-consistent transfer operators of mean-field coupled
//! expanding circle maps: fixed densities, linear response, Lasota-Yorke
//! constants and finite particle ensembles.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod error;
pub mod modes;
pub mod particles;
pub mod periodic;
pub mod response;
pub mod system;
pub mod transfer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use periodic::{ConeParams, Density, PeriodicFn};
pub use system::{CouplingKernel, ExpandingMap, KernelSpec, MapSpec};
pub use transfer::{FixedPointConfig, FixedPointReport, SelfConsistentSystem};
