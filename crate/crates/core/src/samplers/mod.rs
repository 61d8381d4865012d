//! Interacting-particle samplers.
//!
//! Both samplers share one likelihood kernel: a tamed step of the mean and
//! deviations,
//!
//! ```text
//! m' = m − Δs P μ[∇Ψ]
//! Θ' = Θ − (Δs/2) P G Θ,     G = Φ M Φᵀ,  M = (Δs ΦᵀPΦ + μ[R]^{-1})^{-1}
//! ```
//!
//! The homotopy sampler applies it `K = 1/Δs` times. The second-order
//! sampler follows each kernel application with a prior-relaxation step
//! (Lie splitting) and runs until the relative covariance change drops below
//! a threshold.

mod homotopy;
mod second_order;
mod stochastic;
mod taming;

pub use homotopy::{homotopy_step, run_homotopy};
pub use second_order::{
    prior_relax_step, run_second_order, run_second_order_to_horizon, second_order_half_step, second_order_step,
};
pub use stochastic::{noise_increment, run_stochastic_second_order, sqrt_psd};
pub use taming::taming_matrix;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{compute_stats, Ensemble, EnsembleStats};
use crate::error::{Error, Result};
use crate::meanfield::GaussianMoments;
use crate::model::{Likelihood, Taming};
use crate::par::Exec;
use crate::rng::rng_from_seed;

/// Particles whose norm exceeds this abort the run.
pub const BLOW_UP_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopyConfig {
    pub step_size: f64,
    pub steps: usize,
    pub taming: Taming,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl HomotopyConfig {
    pub const DEFAULT_STEP_SIZE: f64 = 1e-3;

    /// `steps` steps of size `1/steps`.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            step_size: 1.0 / steps as f64,
            steps,
            taming: Taming::Full,
            seed: 0,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.step_size > 0.0) {
            return Err(Error::Invalid("homotopy needs K >= 1 and a positive step size".into()));
        }
        if (self.step_size * self.steps as f64 - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "homotopy must end at s = 1, got step size {} x {} steps",
                self.step_size, self.steps
            )));
        }
        Ok(())
    }
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        Self::with_steps((1.0 / Self::DEFAULT_STEP_SIZE).round() as usize)
    }
}

/// Matrix norm used by the stop rule `‖P_{k+1} − P_k‖ / ‖P_k‖ < ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopNorm {
    #[default]
    Frobenius,
    Spectral,
}

impl StopNorm {
    pub fn norm(self, m: &DMatrix<f64>) -> f64 {
        match self {
            StopNorm::Frobenius => m.norm(),
            StopNorm::Spectral => m
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .fold(0.0, |a: f64, v| a.max(v.abs())),
        }
    }

    pub fn relative_change(self, next: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
        let diff = self.norm(&(next - prev));
        let base = self.norm(prev);
        if base > 0.0 {
            diff / base
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderConfig {
    pub step_size: f64,
    pub stop_threshold: f64,
    pub max_steps: usize,
    pub taming: Taming,
    pub stop_norm: StopNorm,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl SecondOrderConfig {
    pub const DEFAULT_STEP_SIZE: f64 = 0.1;
    pub const DEFAULT_THRESHOLD: f64 = 1e-4;
    /// Default step cap in units of pseudo-time.
    pub const DEFAULT_HORIZON: f64 = 30.0;

    pub fn with_step_size(step_size: f64) -> Self {
        Self {
            step_size,
            stop_threshold: Self::DEFAULT_THRESHOLD,
            max_steps: (Self::DEFAULT_HORIZON / step_size).ceil().max(1.0) as usize,
            taming: Taming::Full,
            stop_norm: StopNorm::Frobenius,
            seed: 0,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(Error::Invalid(format!(
                "stop threshold must be positive, got {}",
                self.stop_threshold
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Invalid("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        Self::with_step_size(Self::DEFAULT_STEP_SIZE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    pub step_size: f64,
    pub steps: usize,
    pub taming: Taming,
    pub seed: u64,
    /// Multiplies the Brownian increment; `0` leaves the drift only.
    pub noise_scale: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl StochasticConfig {
    pub fn new(step_size: f64, steps: usize, seed: u64) -> Self {
        Self {
            step_size,
            steps,
            taming: Taming::Full,
            seed,
            noise_scale: 1.0,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Threshold,
    StepCap,
    HomotopyEnd,
    /// Fixed-horizon runs (stochastic sampler, rate studies).
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    /// `‖P_{k+1} − P_k‖ / ‖P_k‖`, exactly the quantity tested by the stop rule.
    pub stop_criterion: f64,
    pub mean_norm: f64,
    pub covariance_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub final_ensemble: Ensemble,
    pub diagnostics: Vec<StepDiagnostics>,
    pub steps_taken: usize,
    pub terminated_by: Termination,
    pub seed: u64,
    pub step_size: f64,
}

/// Draws `size` i.i.d. particles from `N(m, P)` through the Cholesky factor of `P`.
pub fn sample_prior_ensemble(moments: &GaussianMoments, size: usize, seed: u64) -> Result<Ensemble> {
    let d = moments.mean.len();
    if moments.covariance.nrows() != d || moments.covariance.ncols() != d {
        return Err(Error::Dimension(format!(
            "mean has dimension {d}, covariance is {}x{}",
            moments.covariance.nrows(),
            moments.covariance.ncols()
        )));
    }
    if size == 0 {
        return Err(Error::Invalid("ensemble size must be positive".into()));
    }
    let chol = Cholesky::new(moments.covariance.clone())
        .ok_or_else(|| Error::Invalid("covariance is not positive definite".into()))?;
    let mut rng = rng_from_seed(seed);
    let xi = standard_normal_matrix(d, size, &mut rng);
    let mut particles = chol.l() * xi;
    for mut col in particles.column_iter_mut() {
        col += &moments.mean;
    }
    Ensemble::from_columns(particles)
}

/// Column-major draw order, so the result depends only on the RNG state.
pub(crate) fn standard_normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for v in m.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

fn check_dims<L: Likelihood + ?Sized>(ensemble: &Ensemble, likelihood: &L) -> Result<()> {
    if ensemble.dim() != likelihood.param_dim() {
        return Err(Error::Dimension(format!(
            "ensemble has dimension {}, likelihood expects {}",
            ensemble.dim(),
            likelihood.param_dim()
        )));
    }
    if ensemble.size() < 2 {
        return Err(Error::Invalid(format!(
            "samplers need at least 2 particles, got {}",
            ensemble.size()
        )));
    }
    Ok(())
}

/// Shared tamed likelihood step on mean and deviations.
pub(crate) fn likelihood_kernel<L: Likelihood + ?Sized>(
    stats: &EnsembleStats,
    particles: &DMatrix<f64>,
    likelihood: &L,
    step_size: f64,
    taming: Taming,
    exec: Exec,
) -> Result<Ensemble> {
    let terms = likelihood.drift_terms(particles, &stats.covariance, step_size, taming, exec)?;
    // Applied to the particles directly so that zero updates are exact.
    let shift = &stats.covariance * &terms.grad_mean * step_size;
    let gain = &stats.covariance * &terms.curvature;
    let mut next = particles - gain * &stats.deviations * (0.5 * step_size);
    for mut col in next.column_iter_mut() {
        col -= &shift;
    }
    Ensemble::from_columns(next)
}

pub(crate) fn guard(result: Result<Ensemble>, step: usize, step_size: f64) -> Result<Ensemble> {
    let ensemble = result.map_err(|e| match e {
        Error::NonFinite(reason) => Error::BlowUp {
            step,
            step_size,
            reason,
            partial: None,
        },
        other => other,
    })?;
    let norm = ensemble.max_particle_norm();
    if norm > BLOW_UP_NORM {
        return Err(Error::BlowUp {
            step,
            step_size,
            reason: format!("particle norm {norm:.3e} exceeds {BLOW_UP_NORM:.0e}"),
            partial: None,
        });
    }
    Ok(ensemble)
}

/// Attaches the report accumulated so far to a blow-up error.
pub(crate) fn with_partial(err: Error, report: impl FnOnce() -> RunReport) -> Error {
    match err {
        Error::BlowUp {
            step,
            step_size,
            reason,
            partial: None,
        } => Error::BlowUp {
            step,
            step_size,
            reason,
            partial: Some(Box::new(report())),
        },
        other => other,
    }
}

pub(crate) fn diagnostics_for(
    step: usize,
    time: f64,
    stats: &EnsembleStats,
    stop_criterion: f64,
) -> StepDiagnostics {
    StepDiagnostics {
        step,
        time,
        stop_criterion,
        mean_norm: stats.mean.norm(),
        covariance_trace: stats.covariance.trace(),
    }
}

pub(crate) fn stats_of(ensemble: &Ensemble) -> Result<EnsembleStats> {
    compute_stats(ensemble)
}
