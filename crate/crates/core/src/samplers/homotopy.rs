use super::{
    check_dims, diagnostics_for, guard, likelihood_kernel, stats_of, with_partial, HomotopyConfig,
    RunReport, Termination,
};
use crate::ensemble::Ensemble;
use crate::error::Result;
use crate::model::Likelihood;

/// One tamed homotopy step from `s_k = k Δs` to `s_{k+1}`.
pub fn homotopy_step<L: Likelihood + ?Sized>(
    ensemble: &Ensemble,
    likelihood: &L,
    config: &HomotopyConfig,
    k: usize,
) -> Result<Ensemble> {
    check_dims(ensemble, likelihood)?;
    let stats = stats_of(ensemble)?;
    guard(
        likelihood_kernel(
            &stats,
            ensemble.particles(),
            likelihood,
            config.step_size,
            config.taming,
            config.exec,
        ),
        k,
        config.step_size,
    )
}

/// Transports a prior ensemble over `s ∈ [0, 1]` in exactly `K` steps.
///
/// The initial ensemble should be drawn from the prior; see
/// [`sample_prior_ensemble`](super::sample_prior_ensemble).
pub fn run_homotopy<L: Likelihood + ?Sized>(
    initial: &Ensemble,
    likelihood: &L,
    config: &HomotopyConfig,
) -> Result<RunReport> {
    config.validate()?;
    check_dims(initial, likelihood)?;
    let mut current = initial.clone();
    let mut stats = stats_of(&current)?;
    let mut diagnostics = Vec::with_capacity(config.steps);
    for k in 0..config.steps {
        let step = likelihood_kernel(
            &stats,
            current.particles(),
            likelihood,
            config.step_size,
            config.taming,
            config.exec,
        );
        let next = guard(step, k, config.step_size).map_err(|e| {
            with_partial(e, || RunReport {
                final_ensemble: current.clone(),
                diagnostics: diagnostics.clone(),
                steps_taken: k,
                terminated_by: Termination::HomotopyEnd,
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
        terminated_by: Termination::HomotopyEnd,
        seed: config.seed,
        step_size: config.step_size,
    })
}
