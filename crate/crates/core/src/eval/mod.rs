//! Experiment harness built on the samplers and the mean-field solver.
//!
//! Every experiment is a deterministic function of its setup and one master
//! seed. Repeats run through [`Exec`](crate::par::Exec) and are aggregated
//! in repeat order, so sequential and parallel runs agree bit for bit.

mod experiments;
mod predictive;
mod rate;
mod recovery;
mod synth;
mod wasserstein;

pub use experiments::{
    ensemble_size_sweep, multiclass_demo, ood_experiment, ood_from_inputs, MulticlassDemo, OodResult, OodSetup,
    SweepEntry,
};
pub use predictive::{
    box_grid, nearest_distances, ood_confidence_curve, predictive_confidence, OodCurve, Prediction, Predictor,
};
pub use rate::{fit_rate, meanfield_rate_study, moment_error, w2_rate_study, RateFit, RateSetup};
pub use recovery::{recovery_experiment, sample_posterior, Method, PriorKind, RecoveryResult, RecoverySetup};
pub use synth::{
    random_spd_prior, synthesize_logistic_dataset, synthesize_with_parameter, two_clusters, ReluFeatures,
};
pub use wasserstein::{min_cost_assignment, w2_empirical};
