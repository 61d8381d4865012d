use nalgebra::{Cholesky, DMatrix, DVector};

use super::{
    check_dims, diagnostics_for, guard, likelihood_kernel, stats_of, with_partial, RunReport,
    SecondOrderConfig, Termination,
};
use crate::ensemble::{Ensemble, EnsembleStats};
use crate::error::{Error, Result};
use crate::model::{GaussianPrior, Likelihood, Taming};
use crate::par::Exec;

/// First Lie-splitting substep: the homotopy kernel, unchanged.
pub fn second_order_half_step<L: Likelihood + ?Sized>(
    ensemble: &Ensemble,
    likelihood: &L,
    step_size: f64,
    taming: Taming,
    exec: Exec,
) -> Result<Ensemble> {
    check_dims(ensemble, likelihood)?;
    let stats = stats_of(ensemble)?;
    likelihood_kernel(&stats, ensemble.particles(), likelihood, step_size, taming, exec)
}

/// Second substep:
///
/// ```text
/// θ' = θ − (Δs/2) P (Δs P + P_prior)^{-1} (θ + m − 2 m_prior) + (Δs/2)(θ − m)
/// ```
///
/// With diagonal taming and a diagonal prior only the diagonal of
/// `Δs P + P_prior` is inverted.
pub fn prior_relax_step(
    ensemble: &Ensemble,
    prior: &GaussianPrior,
    step_size: f64,
    taming: Taming,
) -> Result<Ensemble> {
    if ensemble.dim() != prior.dim() {
        return Err(Error::Dimension(format!(
            "ensemble has dimension {}, prior has {}",
            ensemble.dim(),
            prior.dim()
        )));
    }
    let stats = stats_of(ensemble)?;
    prior_relax(&stats, ensemble.particles(), prior, step_size, taming, true)
}

pub(crate) fn prior_relax(
    stats: &EnsembleStats,
    particles: &DMatrix<f64>,
    prior: &GaussianPrior,
    step_size: f64,
    taming: Taming,
    spread: bool,
) -> Result<Ensemble> {
    let shift: DVector<f64> = &stats.mean - prior.mean() * 2.0;
    let mut rhs = particles.clone();
    for mut col in rhs.column_iter_mut() {
        col += &shift;
    }
    let system = &stats.covariance * step_size + prior.covariance();
    let solved = if taming == Taming::Diagonal && prior.is_diagonal() {
        let mut s = rhs;
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row /= system[(i, i)];
        }
        s
    } else {
        Cholesky::new(system)
            .ok_or_else(|| Error::NonFinite("prior relaxation system is not positive definite".into()))?
            .solve(&rhs)
    };
    let mut next = particles - &stats.covariance * solved * (0.5 * step_size);
    if spread {
        next += &stats.deviations * (0.5 * step_size);
    }
    Ensemble::from_columns(next)
}

/// One full Lie-splitting step of the deterministic second-order sampler.
pub fn second_order_step<L: Likelihood + ?Sized>(
    ensemble: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    step_size: f64,
    taming: Taming,
    exec: Exec,
) -> Result<Ensemble> {
    check_dims(ensemble, likelihood)?;
    let stats = stats_of(ensemble)?;
    step_from_stats(&stats, ensemble, likelihood, prior, step_size, taming, exec)
}

fn step_from_stats<L: Likelihood + ?Sized>(
    stats: &EnsembleStats,
    ensemble: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    step_size: f64,
    taming: Taming,
    exec: Exec,
) -> Result<Ensemble> {
    let half = likelihood_kernel(stats, ensemble.particles(), likelihood, step_size, taming, exec)?;
    let half_stats = stats_of(&half)?;
    prior_relax(&half_stats, half.particles(), prior, step_size, taming, true)
}

/// Runs the deterministic second-order sampler until
/// `‖P_{k+1} − P_k‖ / ‖P_k‖ < ε` or the step cap is reached.
pub fn run_second_order<L: Likelihood + ?Sized>(
    initial: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    config: &SecondOrderConfig,
) -> Result<RunReport> {
    config.validate()?;
    run_loop(initial, likelihood, prior, config, Some(config.stop_threshold))
}

/// Runs exactly `config.max_steps` steps, ignoring the stop threshold.
/// Used where the pseudo-time horizon itself is fixed.
pub fn run_second_order_to_horizon<L: Likelihood + ?Sized>(
    initial: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    config: &SecondOrderConfig,
) -> Result<RunReport> {
    config.validate()?;
    run_loop(initial, likelihood, prior, config, None)
}

fn run_loop<L: Likelihood + ?Sized>(
    initial: &Ensemble,
    likelihood: &L,
    prior: &GaussianPrior,
    config: &SecondOrderConfig,
    threshold: Option<f64>,
) -> Result<RunReport> {
    check_dims(initial, likelihood)?;
    if prior.dim() != initial.dim() {
        return Err(Error::Dimension(format!(
            "ensemble has dimension {}, prior has {}",
            initial.dim(),
            prior.dim()
        )));
    }
    let cap = if threshold.is_some() {
        Termination::StepCap
    } else {
        Termination::Horizon
    };
    let mut current = initial.clone();
    let mut stats = stats_of(&current)?;
    let mut diagnostics = Vec::new();
    let mut terminated_by = cap;
    for k in 0..config.max_steps {
        let step = step_from_stats(
            &stats,
            &current,
            likelihood,
            prior,
            config.step_size,
            config.taming,
            config.exec,
        );
        let next = guard(step, k, config.step_size).map_err(|e| {
            with_partial(e, || RunReport {
                final_ensemble: current.clone(),
                diagnostics: diagnostics.clone(),
                steps_taken: k,
                terminated_by: cap,
                seed: config.seed,
                step_size: config.step_size,
            })
        })?;
        let next_stats = stats_of(&next)?;
        let change = config
            .stop_norm
            .relative_change(&next_stats.covariance, &stats.covariance);
        diagnostics.push(diagnostics_for(
            k + 1,
            (k + 1) as f64 * config.step_size,
            &next_stats,
            change,
        ));
        current = next;
        stats = next_stats;
        if threshold.is_some_and(|eps| change < eps) {
            terminated_by = Termination::Threshold;
            break;
        }
    }
    Ok(RunReport {
        steps_taken: diagnostics.len(),
        final_ensemble: current,
        diagnostics,
        terminated_by,
        seed: config.seed,
        step_size: config.step_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use crate::samplers::{homotopy_step, HomotopyConfig};
    use nalgebra::dmatrix;

    #[test]
    fn flat_likelihood_fixed_point_is_inflated_prior() {
        // with Φ = 0 the deviations are scaled by 1 + Δs/2 − (Δs/2) c / (Δs c + 1)
        // when P = c I and P_prior = I, which is stationary at c = 1 / (1 − Δs)
        let dt = 0.1;
        let c: f64 = 1.0 / (1.0 - dt);
        let ens = Ensemble::from_columns(dmatrix![-1.0, 1.0, 0.0, 0.0; 0.0, 0.0, -1.0, 1.0] * (2.0 * c).sqrt()).unwrap();
        let before = crate::ensemble::compute_stats(&ens).unwrap();
        assert!((&before.covariance - DMatrix::identity(2, 2) * c).amax() < 1e-14);
        let data = Dataset::new(DMatrix::zeros(2, 3), DVector::from_vec(vec![0.0, 1.0, 1.0])).unwrap();
        let prior = GaussianPrior::standard(2);
        let next = second_order_step(&ens, &data, &prior, dt, Taming::Full, Exec::Sequential).unwrap();
        assert!((next.particles() - ens.particles()).amax() < 1e-14);
    }

    fn instance() -> (Dataset, Ensemble) {
        let data = Dataset::new(
            dmatrix![1.0, -1.0, 0.3; 0.5, 2.0, -0.7],
            DVector::from_vec(vec![1.0, 0.0, 1.0]),
        )
        .unwrap();
        let e = Ensemble::from_particles(&[vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.4, 0.9]]).unwrap();
        (data, e)
    }

    #[test]
    fn half_step_is_the_homotopy_kernel() {
        let (data, e) = instance();
        let cfg = HomotopyConfig {
            exec: Exec::Sequential,
            ..HomotopyConfig::with_steps(4)
        };
        let a = homotopy_step(&e, &data, &cfg, 0).unwrap();
        let b = second_order_half_step(&e, &data, 0.25, Taming::Full, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_step_fixes_zero_spread() {
        let (data, _) = instance();
        let e = Ensemble::from_particles(&vec![vec![0.1, 0.4]; 3]).unwrap();
        let next = second_order_half_step(&e, &data, 0.1, Taming::Full, Exec::Sequential).unwrap();
        assert_eq!(next, e);
    }

    #[test]
    fn half_step_scalar_instance() {
        let data = Dataset::new(dmatrix![1.0], DVector::from_element(1, 1.0)).unwrap();
        let e = Ensemble::from_particles(&[vec![-1.0], vec![1.0]]).unwrap();
        let next = second_order_half_step(&e, &data, 0.5, Taming::Full, Exec::Sequential).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let r_bar = s(1.0) * s(-1.0);
        let m_next = 0.25;
        let shrink = 1.0 - 0.25 / (0.5 + 1.0 / r_bar);
        assert!((next.particle(0)[0] - (m_next - shrink)).abs() < 1e-15);
        assert!((next.particle(1)[0] - (m_next + shrink)).abs() < 1e-15);
    }

    #[test]
    fn relax_fixes_prior_mean_with_zero_spread() {
        let prior = GaussianPrior::new(DVector::from_vec(vec![0.5, -1.0]), dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let e = Ensemble::from_particles(&vec![vec![0.5, -1.0]; 4]).unwrap();
        assert_eq!(prior_relax_step(&e, &prior, 0.3, Taming::Full).unwrap(), e);
    }

    #[test]
    fn relax_with_zero_step_is_identity() {
        let (_, e) = instance();
        let prior = GaussianPrior::standard(2);
        assert_eq!(prior_relax_step(&e, &prior, 0.0, Taming::Full).unwrap(), e);
    }

    #[test]
    fn relax_scalar_instance() {
        let prior = GaussianPrior::new(DVector::from_element(1, 0.5), dmatrix![2.0]).unwrap();
        let e = Ensemble::from_particles(&[vec![-1.0], vec![2.0], vec![0.5]]).unwrap();
        let ds = 0.2;
        let m = 0.5;
        let p = (1.5f64.powi(2) + 1.5f64.powi(2) + 0.0) / 3.0;
        let gain = p / (ds * p + 2.0);
        let next = prior_relax_step(&e, &prior, ds, Taming::Full).unwrap();
        for (j, th) in [-1.0, 2.0, 0.5].iter().enumerate() {
            let want = th - 0.5 * ds * gain * (th + m - 2.0 * 0.5) + 0.5 * ds * (th - m);
            assert!((next.particle(j)[0] - want).abs() < 1e-15);
        }
        // diagonal taming on a diagonal prior takes the same path in one dimension
        let diag = prior_relax_step(&e, &prior, ds, Taming::Diagonal).unwrap();
        assert!((diag.particles() - next.particles()).amax() < 1e-15);
    }

    #[test]
    fn diagonal_relax_inverts_diagonal_only() {
        let prior = GaussianPrior::standard(2);
        let e = Ensemble::from_particles(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let ds = 0.5;
        let next = prior_relax_step(&e, &prior, ds, Taming::Diagonal).unwrap();
        // P = [[1, 1], [1, 1]], diag(ΔsP + I) = 1.5
        let th0 = 1.0;
        let want = th0 - 0.5 * ds * (2.0 / 1.5) * th0 + 0.5 * ds * th0;
        assert!((next.particle(0)[0] - want).abs() < 1e-15);
        let full = prior_relax_step(&e, &prior, ds, Taming::Full).unwrap();
        assert!((full.particle(0)[0] - want).abs() > 1e-3);
    }

    #[test]
    fn stop_rule_terminates_and_records_criterion() {
        let (data, _) = instance();
        let prior = GaussianPrior::standard(2);
        let init = crate::samplers::sample_prior_ensemble(&prior.moments(), 50, 4).unwrap();
        let cfg = SecondOrderConfig {
            exec: Exec::Sequential,
            ..SecondOrderConfig::default()
        };
        let report = run_second_order(&init, &data, &prior, &cfg).unwrap();
        assert_eq!(report.terminated_by, Termination::Threshold);
        assert_eq!(report.diagnostics.len(), report.steps_taken);
        let last = report.diagnostics.last().unwrap();
        assert!(last.stop_criterion < cfg.stop_threshold);
        assert!(report.diagnostics[..report.steps_taken - 1]
            .iter()
            .all(|d| d.stop_criterion >= cfg.stop_threshold));

        let capped = SecondOrderConfig { max_steps: 3, ..cfg };
        let report = run_second_order(&init, &data, &prior, &capped).unwrap();
        assert_eq!(report.terminated_by, Termination::StepCap);
        assert_eq!(report.steps_taken, 3);
    }
}
