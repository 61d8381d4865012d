use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::second_order::prior_relax;
use super::{
    check_dims, diagnostics_for, guard, likelihood_kernel, standard_normal_matrix, stats_of,
    with_partial, RunReport, StochasticConfig, Termination,
};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{GaussianPrior, Likelihood};
use crate::rng::rng_from_seed;

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues
/// below `1e-12 · λ_max` are treated as zero, which covers the rank-deficient
/// covariances of ensembles with `J ≤ D`.
pub fn sqrt_psd(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(matrix.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = 1e-12 * max;
    let roots = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `√Δs · P^{1/2} ξ` for `J` independent standard normal `ξ^j`.
pub fn noise_increment<R: Rng>(
    covariance: &DMatrix<f64>,
    step_size: f64,
    size: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let xi = standard_normal_matrix(covariance.nrows(), size, rng);
    sqrt_psd(covariance) * xi * step_size.sqrt()
}

/// Euler–Maruyama version of the stochastic second-order system: the same
/// tamed likelihood and prior substeps as the deterministic sampler, with
/// the spread-restoring drift replaced by `P^{1/2} dW`.
pub fn run_stochastic_second_order<L: Likelihood + ?Sized>(
    initial: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    config: &StochasticConfig,
) -> Result<RunReport> {
    check_dims(initial, likelihood)?;
    if prior.dim() != initial.dim() {
        return Err(Error::Dimension(format!(
            "ensemble has dimension {}, prior has {}",
            initial.dim(),
            prior.dim()
        )));
    }
    if !(config.step_size > 0.0) || config.steps == 0 {
        return Err(Error::Invalid("need a positive step size and at least one step".into()));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut current = initial.clone();
    let mut stats = stats_of(&current)?;
    let mut diagnostics = Vec::with_capacity(config.steps);
    let size = initial.size();
    for k in 0..config.steps {
        let step = (|| {
            let half = likelihood_kernel(
                &stats,
                current.particles(),
                likelihood,
                config.step_size,
                config.taming,
                config.exec,
            )?;
            let half_stats = stats_of(&half)?;
            let drifted = prior_relax(&half_stats, half.particles(), prior, config.step_size, config.taming, false)?;
            let mut particles = drifted.into_inner();
            if config.noise_scale != 0.0 {
                particles += noise_increment(&stats.covariance, config.step_size, size, &mut rng)
                    * config.noise_scale;
            }
            Ensemble::from_columns(particles)
        })();
        let next = guard(step, k, config.step_size).map_err(|e| {
            with_partial(e, || RunReport {
                final_ensemble: current.clone(),
                diagnostics: diagnostics.clone(),
                steps_taken: k,
                terminated_by: Termination::Horizon,
                seed: config.seed,
                step_size: config.step_size,
            })
        })?;
        let next_stats = stats_of(&next)?;
        let change = crate::samplers::StopNorm::Frobenius
            .relative_change(&next_stats.covariance, &stats.covariance);
        diagnostics.push(diagnostics_for(
            k + 1,
            (k + 1) as f64 * config.step_size,
            &next_stats,
            change,
        ));
        current = next;
        stats = next_stats;
    }
    Ok(RunReport {
        final_ensemble: current,
        diagnostics,
        steps_taken: config.steps,
        terminated_by: Termination::Horizon,
        seed: config.seed,
        step_size: config.step_size,
    })
}
