//! Quantile regression with certified dual solutions, leave-one-out dual
//! calibration, dual-threshold conformal prediction and the proportional
//! asymptotics of in-sample coverage.

pub mod error;
pub mod experiments;
pub mod model;
pub mod asymptotics;
pub mod calibrate;
pub mod conformal;
pub mod loo;
pub mod metrics;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Dataset, FitResult, InterceptMode, KktCertificate, ProblemSpec};
pub use solver::{fit, fit_augmented, SolverConfig};
