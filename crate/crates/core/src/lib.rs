//! Ensemble-transform interacting particle samplers for Bayesian logistic
//! regression, with their Gaussian mean-field limit and the evaluation
//! experiments built on top of them.
//!
//! ```no_run
//! use ensemble_logreg::prelude::*;
//!
//! # fn main() -> ensemble_logreg::Result<()> {
//! let streams = SeedStreams::new(7);
//! let (data, truth) = synthesize_logistic_dataset(20, 200, streams.seed("dataset", 0))?;
//! let prior = GaussianPrior::standard(20);
//! let init = sample_prior_ensemble(&prior.moments(), 100, streams.seed(INIT_ENSEMBLE, 0))?;
//! let report = run_second_order(&init, &data, &prior, &SecondOrderConfig::default())?;
//! let error = (report.final_ensemble.mean() - truth).norm();
//! # let _ = error;
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod io;
pub mod meanfield;
pub mod model;
pub mod par;
pub mod rng;
pub mod samplers;

pub use error::{Error, ErrorKind, Result};
pub use nalgebra;

pub mod prelude {
    pub use crate::ensemble::{compute_stats, Ensemble, EnsembleStats};
    pub use crate::error::{Error, Result};
    pub use crate::eval::synthesize_logistic_dataset;
    pub use crate::meanfield::GaussianMoments;
    pub use crate::model::{Dataset, GaussianPrior, Likelihood, Taming};
    pub use crate::par::Exec;
    pub use crate::rng::{SeedStreams, INIT_ENSEMBLE};
    pub use crate::samplers::{
        run_homotopy, run_second_order, run_stochastic_second_order, sample_prior_ensemble, HomotopyConfig,
        SecondOrderConfig, StochasticConfig,
    };
}
