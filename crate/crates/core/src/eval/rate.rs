//! Empirical `J^{-1/2}` rate of the particle system towards its mean-field
//! limit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::synth::synthesize_logistic_dataset;
use super::wasserstein::w2_empirical;
use crate::ensemble::compute_stats;
use crate::error::{Error, Result};
use crate::meanfield::{integrate_moments, MeanfieldPath, MomentVariant};
use crate::model::{GaussianPrior, Taming};
use crate::par::Exec;
use crate::rng::{SeedStreams, DATASET, INIT_ENSEMBLE};
use crate::samplers::{run_second_order_to_horizon, sample_prior_ensemble, SecondOrderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSetup {
    pub dim: usize,
    pub samples: usize,
    /// Step size of both the particle sampler and the RK4 reference.
    pub step_size: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RateSetup {
    fn default() -> Self {
        Self {
            dim: 5,
            samples: 20,
            step_size: 0.002,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub ensemble_sizes: Vec<usize>,
    /// Repeat-averaged error per ensemble size.
    pub errors: Vec<f64>,
    /// `raw[i][r]` is repeat `r` at `ensemble_sizes[i]`.
    pub raw: Vec<Vec<f64>>,
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% t-interval on the slope.
    pub slope_half_width: f64,
}

/// Ordinary least squares on `(log J, log e)`.
pub fn fit_rate(ensemble_sizes: &[usize], errors: &[f64]) -> Result<(f64, f64, f64)> {
    let mut distinct = ensemble_sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 || ensemble_sizes.len() != errors.len() {
        return Err(Error::Invalid(format!(
            "rate fit needs at least 4 distinct ensemble sizes, got {}",
            distinct.len()
        )));
    }
    if errors.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::NonFinite("rate fit needs positive finite errors".into()));
    }
    let x: Vec<f64> = ensemble_sizes.iter().map(|&j| (j as f64).ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = n - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((slope, intercept, t * se))
}

fn check_request(ensemble_sizes: &[usize], horizon: f64, repeats: usize) -> Result<()> {
    let mut distinct = ensemble_sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Invalid(format!(
            "rate study needs at least 4 distinct ensemble sizes, got {}",
            distinct.len()
        )));
    }
    if distinct[0] < 2 {
        return Err(Error::Invalid("ensemble sizes must be at least 2".into()));
    }
    if repeats == 0 || !(horizon > 0.0) {
        return Err(Error::Invalid("need repeats >= 1 and a positive horizon".into()));
    }
    Ok(())
}

fn finish(ensemble_sizes: &[usize], repeats: usize, flat: Vec<f64>) -> Result<RateFit> {
    let raw: Vec<Vec<f64>> = flat.chunks(repeats).map(<[f64]>::to_vec).collect();
    let errors: Vec<f64> = raw.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let (slope, intercept, slope_half_width) = fit_rate(ensemble_sizes, &errors)?;
    Ok(RateFit {
        ensemble_sizes: ensemble_sizes.to_vec(),
        errors,
        raw,
        slope,
        intercept,
        slope_half_width,
    })
}

struct Instance {
    data: crate::model::Dataset,
    prior: GaussianPrior,
    steps: usize,
}

fn instance(setup: &RateSetup, horizon: f64, streams: &SeedStreams) -> Result<Instance> {
    if !(setup.step_size > 0.0) {
        return Err(Error::Invalid("step size must be positive".into()));
    }
    let (data, _) = synthesize_logistic_dataset(setup.dim, setup.samples, streams.seed(DATASET, 0))?;
    Ok(Instance {
        data,
        prior: GaussianPrior::standard(setup.dim),
        steps: ((horizon / setup.step_size).round() as usize).max(1),
    })
}

fn particle_config(steps: usize, horizon: f64) -> SecondOrderConfig {
    SecondOrderConfig {
        max_steps: steps,
        taming: Taming::Full,
        exec: Exec::Sequential,
        ..SecondOrderConfig::with_step_size(horizon / steps as f64)
    }
}

fn init_seed(streams: &SeedStreams, ensemble_size: usize, repeat: usize) -> u64 {
    streams.child("ensemble-size", ensemble_size as u64).seed(INIT_ENSEMBLE, repeat as u64)
}

/// Moment-error proxy `e(J) = ‖m_θ − m_T‖₂ + ‖P_θ − P_T‖_F` between the
/// particle sampler at pseudo-time `T` and the RK4 solution of the moment
/// equations, both started from the prior `N(0, I)`.
pub fn meanfield_rate_study(
    ensemble_sizes: &[usize],
    horizon: f64,
    repeats: usize,
    seed: u64,
    setup: &RateSetup,
) -> Result<RateFit> {
    check_request(ensemble_sizes, horizon, repeats)?;
    let streams = SeedStreams::new(seed);
    let inst = instance(setup, horizon, &streams)?;
    let init = inst.prior.moments();
    let reference = integrate_moments(&init, &inst.data, &inst.prior, horizon / inst.steps as f64, horizon, MomentVariant::SecondOrder)?;
    let target = reference.last();
    let config = particle_config(inst.steps, horizon);
    let jobs = ensemble_sizes.len() * repeats;
    let flat = setup.exec.map(jobs, |k| -> Result<f64> {
        let j = ensemble_sizes[k / repeats];
        let initial = sample_prior_ensemble(&init, j, init_seed(&streams, j, k % repeats))?;
        let report = run_second_order_to_horizon(&initial, &inst.data, &inst.prior, &config)?;
        let stats = compute_stats(&report.final_ensemble)?;
        Ok(moment_error(&stats.mean, &stats.covariance, &target.mean, &target.covariance))
    });
    finish(ensemble_sizes, repeats, flat.into_iter().collect::<Result<_>>()?)
}

/// Cross-check of [`meanfield_rate_study`] with the exact empirical `W₂`
/// between the particle sampler and mean-field particles driven by the
/// exact Gaussian law, started from the same draws.
pub fn w2_rate_study(
    ensemble_sizes: &[usize],
    horizon: f64,
    repeats: usize,
    seed: u64,
    setup: &RateSetup,
) -> Result<RateFit> {
    check_request(ensemble_sizes, horizon, repeats)?;
    let streams = SeedStreams::new(seed);
    let inst = instance(setup, horizon, &streams)?;
    let init = inst.prior.moments();
    let config = particle_config(inst.steps, horizon);
    let path = MeanfieldPath::new(&init, &inst.data, &inst.prior, config.step_size, horizon)?;
    let jobs = ensemble_sizes.len() * repeats;
    let flat = setup.exec.map(jobs, |k| -> Result<f64> {
        let j = ensemble_sizes[k / repeats];
        let initial = sample_prior_ensemble(&init, j, init_seed(&streams, j, k % repeats))?;
        let report = run_second_order_to_horizon(&initial, &inst.data, &inst.prior, &config)?;
        let limit = path.transport(initial.particles())?;
        w2_empirical(report.final_ensemble.particles(), &limit)
    });
    finish(ensemble_sizes, repeats, flat.into_iter().collect::<Result<_>>()?)
}

/// `e = ‖Δm‖₂ + ‖ΔP‖_F`, the moment-error proxy on its own.
pub fn moment_error(
    mean_a: &DVector<f64>,
    cov_a: &nalgebra::DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &nalgebra::DMatrix<f64>,
) -> f64 {
    (mean_a - mean_b).norm() + (cov_a - cov_b).norm()
}
