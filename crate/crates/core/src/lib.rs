//! Nonparametric estimation of time-varying drift and diffusion for the
//! linear SDE family
//!
//! ```text
//! dX(t) = mu(t) X(t)^alpha dt + sigma(t) X(t)^beta dB(t),  alpha in {0, 1}, beta in {0, 1/2, 1}
//! ```
//!
//! from many independent paths, each observed at a handful of random times
//! with additive noise. The pipeline pools all observations, smooths the
//! mean curve and the second-moment surface on the lower triangle with
//! local polynomials, then inverts the moment equations for `mu` and
//! `sigma^2`.
//!
//! ```no_run
//! use sde_moments::prelude::*;
//!
//! let model = make_builtin_model("brownian_bridge")?;
//! let paths = simulate_paths(&model, 500, 1e-3, RngSpec::new(7))?;
//! let obs = sample_observations(&paths, 5, 0.05, RngSpec::new(7))?;
//! let cfg = SmootherConfig::for_design(obs.n(), obs.r());
//! let est = estimate_coefficients(&obs, &cfg, model.exponents(), InversionOptions::default())?;
//! println!("{:?}", est.mu_hat);
//! # Ok::<(), sde_moments::Error>(())
//! ```

pub mod estimators;
pub mod format;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod simulate;
pub mod smooth;

use thiserror::Error;

pub use estimators::{estimate_coefficients, CoefficientEstimates, InversionOptions};
pub use model::{make_builtin_model, validate_model, Exponents, ModelSpec};
pub use simulate::{ObservationSet, RngSpec};
pub use smooth::{EvaluationGrid, Kernel, MomentEstimates, SmootherConfig};

pub mod prelude {
    pub use crate::estimators::{estimate_coefficients, CoefficientEstimates, InversionOptions};
    pub use crate::harness::{run_experiment, write_report, ExperimentConfig};
    pub use crate::model::{make_builtin_model, Coefficient, Exponents, InitialLaw, ModelSpec};
    pub use crate::oracle::closed_form_moments;
    pub use crate::simulate::{em_simulate, sample_observations, simulate_paths, ObservationSet, RngSpec};
    pub use crate::smooth::{EvaluationGrid, Kernel, SmootherConfig};
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Simulation(#[from] simulate::SimError),
    #[error(transparent)]
    Data(#[from] simulate::DataError),
    #[error(transparent)]
    Smooth(#[from] smooth::SmoothError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for bad input (parse errors, invariant or config violations);
    /// false for failures while computing on valid input.
    pub fn is_validation(&self) -> bool {
        use simulate::{DataError, SimError};
        use smooth::SmoothError;
        match self {
            Error::Model(_) | Error::Harness(_) => true,
            Error::Simulation(e) => !matches!(e, SimError::NonFiniteState { .. }),
            Error::Data(e) => !matches!(e, DataError::Io(_)),
            Error::Smooth(e) => !matches!(e, SmoothError::SingularDesign { .. }),
            Error::Oracle(e) => !matches!(e, oracle::OracleError::SingularDesign),
            Error::Io(_) => false,
        }
    }
}
