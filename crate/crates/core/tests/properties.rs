mod common;

use common::*;
use ensemble_logreg::ensemble::{compute_stats, Ensemble};
use ensemble_logreg::eval::{
    moment_error, predictive_confidence, recovery_experiment, Method, Predictor, PriorKind, RecoverySetup,
};
use ensemble_logreg::meanfield::{integrate_moments, GaussianMoments, MomentVariant};
use ensemble_logreg::model::multiclass::predictive_probs;
use ensemble_logreg::model::{cross_entropy, evaluate, grad_loss, hessian_loss, Dataset, GaussianPrior};
use ensemble_logreg::nalgebra::{DMatrix, DVector};
use ensemble_logreg::par::Exec;
use ensemble_logreg::samplers::{
    run_homotopy, run_second_order, run_stochastic_second_order, HomotopyConfig, SecondOrderConfig,
    StochasticConfig, Termination,
};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn affine_bookkeeping(dim in 1usize..6, size in 2usize..12, seed in any::<u64>()) {
        let ens = random_ensemble(dim, size, seed);
        // diagonally dominant, hence invertible
        let a = normal_matrix(dim, dim, seed ^ 1) + DMatrix::identity(dim, dim) * (2.0 * dim as f64);
        let b = normal_matrix(dim, 1, seed ^ 2).column(0).into_owned();
        prop_assert_eq!(check_affine(&ens, &a, &b), Ok(()));
    }

    #[test]
    fn stats_are_permutation_invariant(dim in 1usize..6, size in 2usize..12, seed in any::<u64>(), rot in 0usize..12) {
        let ens = random_ensemble(dim, size, seed);
        let mut order: Vec<usize> = (0..size).collect();
        order.rotate_left(rot % size);
        order.swap(0, size - 1);
        let shuffled = Ensemble::from_columns(ens.particles().select_columns(&order)).unwrap();
        let a = compute_stats(&ens).unwrap();
        let b = compute_stats(&shuffled).unwrap();
        prop_assert!((&a.mean - &b.mean).amax() <= 1e-12 * (1.0 + a.mean.amax()));
        prop_assert!((&a.covariance - &b.covariance).amax() <= 1e-12 * a.covariance.amax());
    }

    #[test]
    fn covariance_rank_is_bounded(dim in 2usize..10, size in 2usize..10, seed in any::<u64>()) {
        let s = compute_stats(&random_ensemble(dim, size, seed)).unwrap();
        let eig = s.covariance.clone().symmetric_eigenvalues();
        let rank = eig.iter().filter(|&&l| l > 1e-10 * eig.max()).count();
        prop_assert!(rank <= dim.min(size - 1));
        let col_sum = s.deviations.column_sum();
        prop_assert!(col_sum.amax() <= 1e-10 * (1.0 + s.deviations.amax()));
        prop_assert_eq!(check_sym_psd(&s.covariance), Ok(()));
    }

    #[test]
    fn likelihood_entries_are_bounded(dim in 1usize..6, samples in 1usize..20, seed in any::<u64>(), scale in 0.0f64..10.0) {
        let data = random_dataset(dim, samples, seed);
        let theta = normal_matrix(dim, 1, seed ^ 3).column(0) * scale;
        let ev = evaluate(&theta, &data).unwrap();
        prop_assert!(ev.y.iter().all(|&y| (0.0..=1.0).contains(&y)));
        prop_assert!(ev.r_diag.iter().all(|&r| (0.0..=0.25).contains(&r)));
        prop_assert!(ev.loss.is_finite() && ev.loss >= 0.0);
    }

    #[test]
    fn cross_entropy_is_midpoint_convex(dim in 1usize..6, samples in 1usize..20, seed in any::<u64>()) {
        let data = random_dataset(dim, samples, seed);
        let a = normal_matrix(dim, 1, seed ^ 4).column(0) * 3.0;
        let b = normal_matrix(dim, 1, seed ^ 5).column(0) * 3.0;
        let mid = (&a + &b) * 0.5;
        let fa = cross_entropy(&a, &data).unwrap();
        let fb = cross_entropy(&b, &data).unwrap();
        let fm = cross_entropy(&mid, &data).unwrap();
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa.abs() + fb.abs()));
    }

    #[test]
    fn gradient_and_hessian_match_differences(dim in 1usize..5, samples in 1usize..15, seed in any::<u64>()) {
        let data = random_dataset(dim, samples, seed);
        let theta = normal_matrix(dim, 1, seed ^ 6).column(0).into_owned();
        let g = grad_loss(&theta, &data).unwrap();
        let h = hessian_loss(&theta, &data).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * (1.0 + h.amax()));
        prop_assert!(h.clone().symmetric_eigenvalues().min() >= -1e-12 * (1.0 + h.amax()));
        let eps = 1e-5;
        for i in 0..dim {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += eps;
            tm[i] -= eps;
            let fd = (cross_entropy(&tp, &data).unwrap() - cross_entropy(&tm, &data).unwrap()) / (2.0 * eps);
            prop_assert!((fd - g[i]).abs() <= 1e-6, "grad {i}: {} vs {}", fd, g[i]);
            let col = (grad_loss(&tp, &data).unwrap() - grad_loss(&tm, &data).unwrap()) / (2.0 * eps);
            prop_assert!((col - h.column(i)).amax() <= 1e-5);
        }
    }

    #[test]
    fn confidence_stays_in_range(dim in 1usize..5, size in 1usize..10, seed in any::<u64>(), scale in 0.0f64..20.0) {
        let particles = normal_matrix(dim, size, seed) * scale;
        let features = normal_matrix(dim, 8, seed ^ 7);
        let ens = Ensemble::from_columns(particles.clone()).unwrap();
        for p in predictive_confidence(Predictor::Ensemble(&ens), &features).unwrap() {
            prop_assert!((0.5..=1.0).contains(&p.confidence));
            prop_assert!((0.0..=1.0).contains(&p.probability));
        }
        // the same particles read as K stacked class weights
        let classes = 3;
        let stacked = normal_matrix(classes * dim, size, seed ^ 8) * scale;
        for probs in predictive_probs(&stacked, classes, &features).unwrap() {
            let conf = probs.iter().copied().fold(0.0, f64::max);
            prop_assert!(conf >= 1.0 / classes as f64 - 1e-12 && conf <= 1.0 + 1e-12);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_error_is_a_discrepancy(dim in 1usize..5, seed in any::<u64>(), shift in 0.0f64..1.0) {
        let m = normal_matrix(dim, 1, seed).column(0).into_owned();
        let a = normal_matrix(dim, dim, seed ^ 9);
        let p = &a * a.transpose();
        prop_assert_eq!(moment_error(&m, &p, &m, &p), 0.0);
        let m2 = m.add_scalar(shift);
        let e = moment_error(&m, &p, &m2, &p);
        prop_assert!(e >= 0.0);
        prop_assert_eq!(e == 0.0, shift == 0.0);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn samplers_keep_the_initial_span(dim in 4usize..8, size in 2usize..5, samples in 3usize..12, seed in any::<u64>()) {
        // J ≤ D, so the span is a proper subspace
        let data = random_dataset(dim, samples, seed);
        let initial = random_ensemble(dim, size, seed ^ 10);
        prop_assert_eq!(check_trajectory(&initial, &data, None, 0.05, 20, Exec::Sequential), Ok(()));
        let prior = GaussianPrior::standard(dim);
        prop_assert_eq!(check_trajectory(&initial, &data, Some(&prior), 0.1, 20, Exec::Sequential), Ok(()));
    }

    #[test]
    fn covariance_stays_symmetric_psd(dim in 1usize..6, size in 2usize..20, samples in 1usize..15, seed in any::<u64>()) {
        let data = random_dataset(dim, samples, seed);
        let initial = random_ensemble(dim, size, seed ^ 11);
        let a = normal_matrix(dim, dim, seed ^ 12);
        let prior = GaussianPrior::new(DVector::zeros(dim), &a * a.transpose() + DMatrix::identity(dim, dim)).unwrap();
        prop_assert_eq!(check_trajectory(&initial, &data, Some(&prior), 0.1, 30, Exec::Sequential), Ok(()));
    }

    #[test]
    fn flat_likelihood_homotopy_is_identity(dim in 1usize..6, size in 2usize..15, samples in 1usize..10, seed in any::<u64>()) {
        let labels = DVector::from_fn(samples, |n, _| (n % 2) as f64);
        let data = Dataset::new(DMatrix::zeros(dim, samples), labels).unwrap();
        let initial = random_ensemble(dim, size, seed);
        let report = run_homotopy(&initial, &data, &HomotopyConfig::with_steps(50)).unwrap();
        prop_assert_eq!(report.final_ensemble.particles(), initial.particles());
    }

    #[test]
    fn runs_are_reproducible_and_exec_independent(seed in any::<u64>()) {
        let data = random_dataset(3, 12, seed);
        let prior = GaussianPrior::standard(3);
        let initial = random_ensemble(3, 10, seed ^ 13);
        let mut cfg = SecondOrderConfig {
            exec: Exec::Sequential,
            ..SecondOrderConfig::default()
        };
        let a = run_second_order(&initial, &data, &prior, &cfg).unwrap();
        let b = run_second_order(&initial, &data, &prior, &cfg).unwrap();
        cfg.exec = Exec::Parallel;
        let c = run_second_order(&initial, &data, &prior, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        let mut sc = StochasticConfig::new(0.1, 20, seed);
        sc.exec = Exec::Sequential;
        let x = run_stochastic_second_order(&initial, &data, &prior, &sc).unwrap();
        sc.exec = Exec::Parallel;
        let y = run_stochastic_second_order(&initial, &data, &prior, &sc).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn stop_rule_matches_diagnostics(seed in any::<u64>(), eps in 1e-4f64..1e-2) {
        let data = random_dataset(3, 12, seed);
        let prior = GaussianPrior::standard(3);
        let initial = random_ensemble(3, 10, seed ^ 14);
        let cfg = SecondOrderConfig {
            stop_threshold: eps,
            ..SecondOrderConfig::default()
        };
        let r = run_second_order(&initial, &data, &prior, &cfg).unwrap();
        prop_assert_eq!(r.diagnostics.len(), r.steps_taken);
        let (last, rest) = r.diagnostics.split_last().unwrap();
        prop_assert!(rest.iter().all(|d| d.stop_criterion >= eps));
        prop_assert_eq!(r.terminated_by == Termination::Threshold, last.stop_criterion < eps);
    }

    #[test]
    fn moment_flow_preserves_structure(dim in 2usize..5, samples in 1usize..10, seed in any::<u64>()) {
        let data = random_dataset(dim, samples, seed);
        let prior = GaussianPrior::standard(dim);
        // rank-deficient start with a known kernel direction
        let a = normal_matrix(dim, dim - 1, seed ^ 15);
        let p0 = &a * a.transpose();
        let kernel = p0.clone().symmetric_eigen();
        let imin = kernel.eigenvalues.imin();
        let v = kernel.eigenvectors.column(imin).into_owned();
        let start = GaussianMoments::new(DVector::zeros(dim), p0.clone()).unwrap();
        let traj = integrate_moments(&start, &data, &prior, 0.01, 2.0, MomentVariant::SecondOrder).unwrap();
        let h = traj.times[1] - traj.times[0];
        for w in traj.states.windows(2) {
            prop_assert!((&w[1].covariance * &v).norm() <= 1e-10 * (1.0 + w[1].covariance.norm()));
            // d‖P‖²/ds = 2‖P‖² − 2 tr(P·PAP) with A ⪰ 0, so growth is at most e^h
            prop_assert!(w[1].covariance.norm() <= h.exp() * w[0].covariance.norm() * (1.0 + 1e-12) + 1e-14);
        }
        let spd = GaussianMoments::new(DVector::zeros(dim), p0 + DMatrix::identity(dim, dim) * 0.1).unwrap();
        let traj = integrate_moments(&spd, &data, &prior, 0.01, 2.0, MomentVariant::SecondOrder).unwrap();
        for s in &traj.states {
            prop_assert!(s.covariance.clone().symmetric_eigenvalues().min() > 0.0);
            prop_assert_eq!(check_sym_psd(&s.covariance), Ok(()));
        }
    }
}

#[test]
fn quadrature_agrees_with_monte_carlo() {
    let m = GaussianMoments::new(DVector::from_vec(vec![0.5, -1.0, 2.0]), {
        let a = normal_matrix(3, 3, 21);
        &a * a.transpose() + DMatrix::identity(3, 3)
    })
    .unwrap();
    assert_eq!(check_quadrature_vs_mc(&m, &normal_matrix(3, 6, 22), 200_000, 23, 4.0), Ok(()));
}

#[test]
fn recovery_aggregates_are_recomputable_and_seeded() {
    let setup = RecoverySetup {
        dim: 4,
        samples: 40,
        ..RecoverySetup::default()
    };
    let a = recovery_experiment(Method::SecondOrder, 8, 4, PriorKind::RandomSpd, 3, &setup).unwrap();
    let b = recovery_experiment(Method::SecondOrder, 8, 4, PriorKind::RandomSpd, 3, &setup).unwrap();
    assert_eq!(a, b);
    let (mean, sd) = a.recomputed();
    assert_eq!(mean, a.mean_error);
    assert_eq!(sd, a.std_dev);
    let direct: Vec<f64> = a.errors.iter().flatten().copied().collect();
    assert!((direct.iter().sum::<f64>() / direct.len() as f64 - mean).abs() < 1e-15);
}

#[test]
fn probit_matches_sampled_ensemble() {
    use ensemble_logreg::meanfield::laplace_fit;
    use ensemble_logreg::samplers::sample_prior_ensemble;
    let data = random_dataset(4, 40, 31);
    let fit = laplace_fit(&data, &GaussianPrior::standard(4), 1e-12, 100).unwrap();
    let ens = sample_prior_ensemble(&fit, 100_000, 32).unwrap();
    let features = normal_matrix(4, 20, 33) * 2.0;
    let probit = predictive_confidence(Predictor::Probit(&fit), &features).unwrap();
    let sampled = predictive_confidence(Predictor::Ensemble(&ens), &features).unwrap();
    for (p, s) in probit.iter().zip(&sampled) {
        assert!((p.probability - s.probability).abs() < 0.02, "{} vs {}", p.probability, s.probability);
    }
}

