//! Invariant checks shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use ensemble_logreg::ensemble::{compute_stats, Ensemble};
use ensemble_logreg::meanfield::{gaussian_expectations, GaussianMoments};
use ensemble_logreg::model::{sigmoid, Dataset, GaussianPrior, Taming};
use ensemble_logreg::nalgebra::{DMatrix, DVector};
use ensemble_logreg::par::Exec;
use ensemble_logreg::rng::rng_from_seed;
use ensemble_logreg::samplers::{homotopy_step, second_order_step, HomotopyConfig};
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<(), String>;

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn random_ensemble(dim: usize, size: usize, seed: u64) -> Ensemble {
    Ensemble::from_columns(normal_matrix(dim, size, seed)).unwrap()
}

/// Features with standard-normal entries and labels drawn from a random
/// logistic model.
pub fn random_dataset(dim: usize, samples: usize, seed: u64) -> Dataset {
    let phi = normal_matrix(dim, samples, seed);
    let theta = normal_matrix(dim, 1, seed ^ 0x5eed);
    let mut rng = rng_from_seed(seed.wrapping_add(1));
    let labels = DVector::from_iterator(
        samples,
        phi.column_iter().map(|c| {
            let u: f64 = rand::Rng::random(&mut rng);
            f64::from(u < sigmoid(c.dot(&theta.column(0))))
        }),
    );
    Dataset::new(phi, labels).unwrap()
}

fn rel(a: f64, scale: f64) -> f64 {
    a / scale.max(1e-300)
}

/// Stats of `{Aθ + b}` equal `A m + b` and `A P Aᵀ`.
pub fn check_affine(ensemble: &Ensemble, a: &DMatrix<f64>, b: &DVector<f64>) -> Check {
    let s = compute_stats(ensemble).map_err(|e| e.to_string())?;
    let mut moved = a * ensemble.particles();
    for mut c in moved.column_iter_mut() {
        c += b;
    }
    let t = compute_stats(&Ensemble::from_columns(moved).unwrap()).map_err(|e| e.to_string())?;
    let want_mean = a * &s.mean + b;
    let want_cov = a * &s.covariance * a.transpose();
    let em = rel((&t.mean - &want_mean).amax(), 1.0 + want_mean.amax());
    let ep = rel((&t.covariance - &want_cov).amax(), want_cov.amax());
    if em > 1e-10 || ep > 1e-10 {
        return Err(format!("affine mismatch: mean {em:.2e}, covariance {ep:.2e}"));
    }
    Ok(())
}

/// Symmetric to `1e-12` relative and no eigenvalue below `-1e-10·λ_max`.
pub fn check_sym_psd(p: &DMatrix<f64>) -> Check {
    let scale = p.amax();
    let asym = (p - p.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(format!("asymmetry {asym:.2e} at scale {scale:.2e}"));
    }
    let eig = p.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo < -1e-10 * hi.max(1e-300) {
        return Err(format!("eigenvalue {lo:.2e} with largest {hi:.2e}"));
    }
    Ok(())
}

/// Residual of `θ − m_0` off the span of the initial deviations, relative
/// to the ensemble scale.
pub fn off_span_residual(initial: &Ensemble, later: &Ensemble) -> f64 {
    let s = compute_stats(initial).unwrap();
    let eig = s.covariance.clone().symmetric_eigen();
    let tol = 1e-10 * eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    let basis = eig.eigenvectors.select_columns(&keep);
    let mut worst: f64 = 0.0;
    for theta in later.particles().column_iter() {
        let v = theta - &s.mean;
        let off = &v - &basis * (basis.tr_mul(&v));
        worst = worst.max(off.norm() / (1.0 + v.norm()));
    }
    worst
}

/// Runs `steps` steps of either sampler, checking the span of the initial
/// ensemble and the covariance after every step.
pub fn check_trajectory(
    initial: &Ensemble,
    data: &Dataset,
    prior: Option<&GaussianPrior>,
    step_size: f64,
    steps: usize,
    exec: Exec,
) -> Check {
    let mut current = initial.clone();
    let homotopy = HomotopyConfig {
        step_size,
        steps,
        taming: Taming::Full,
        seed: 0,
        exec,
    };
    for k in 0..steps {
        current = match prior {
            Some(prior) => second_order_step(&current, data, prior, step_size, Taming::Full, exec),
            None => homotopy_step(&current, data, &homotopy, k),
        }
        .map_err(|e| e.to_string())?;
        let s = compute_stats(&current).map_err(|e| e.to_string())?;
        check_sym_psd(&s.covariance).map_err(|e| format!("step {k}: {e}"))?;
        let off = off_span_residual(initial, &current);
        if off > 1e-8 {
            return Err(format!("step {k}: particle leaves the initial span by {off:.2e}"));
        }
    }
    Ok(())
}

/// Gauss–Hermite `(μ[y], μ[R])` against `draws` Monte Carlo samples of
/// `θᵀφ`, within `z` standard errors.
pub fn check_quadrature_vs_mc(moments: &GaussianMoments, features: &DMatrix<f64>, draws: usize, seed: u64, z: f64) -> Check {
    let (y_bar, r_bar) = gaussian_expectations(moments, features).map_err(|e| e.to_string())?;
    let l = moments.covariance.clone().cholesky().ok_or("covariance not SPD")?.l();
    let mut rng = rng_from_seed(seed);
    for (n, phi) in features.column_iter().enumerate() {
        let a = phi.dot(&moments.mean);
        let scale = (l.transpose() * phi).norm();
        let (mut sy, mut sy2, mut sr, mut sr2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let y = sigmoid(a + scale * xi);
            let r = y * (1.0 - y);
            sy += y;
            sy2 += y * y;
            sr += r;
            sr2 += r * r;
        }
        let k = draws as f64;
        for (name, s, s2, q) in [("y", sy, sy2, y_bar[n]), ("r", sr, sr2, r_bar[n])] {
            let mean = s / k;
            let se = ((s2 / k - mean * mean).max(0.0) / k).sqrt();
            if (mean - q).abs() > z * se + 1e-12 {
                return Err(format!("sample {n}, {name}: quadrature {q:.6}, Monte Carlo {mean:.6} ± {se:.1e}"));
            }
        }
    }
    Ok(())
}
