//! Scalar Gaussian expectations. Gauss–Hermite is used while the variance
//! is small; beyond that the sigmoid's transition is narrower than the
//! node spacing and a composite Gauss–Legendre rule over `±9` standard
//! deviations takes over.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Hermite order.
pub const ORDER: usize = 40;

/// Largest variance handed to the Gauss–Hermite rule.
pub const HERMITE_MAX_VARIANCE: f64 = 1.0;

const LEGENDRE_ORDER: usize = 10;
const WINDOW: f64 = 9.0;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes and weights for `∫ e^{-x²} f(x) dx`. Golub–Welsch provides the
    /// starting nodes, which are then polished by Newton steps on the
    /// orthonormal Hermite recurrence; weights come from the derivative.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(order);
        for x in nodes.iter_mut() {
            let mut deriv = 0.0;
            for _ in 0..8 {
                let (p, dp) = orthonormal_hermite(order, *x);
                deriv = dp;
                let dx = p / dp;
                *x -= dx;
                if dx.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp) = orthonormal_hermite(order, *x);
            if dp.is_finite() {
                deriv = dp;
            }
            weights.push(2.0 / (deriv * deriv));
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(z)]` for `z ~ N(mean, variance)`.
    pub fn expectation<F: Fn(f64) -> f64>(&self, mean: f64, variance: f64, f: F) -> f64 {
        let scale = (2.0 * variance.max(0.0)).sqrt();
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        total / std::f64::consts::PI.sqrt()
    }
}

/// Value and derivative of the degree-`n` orthonormal Hermite polynomial.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, (2.0 * n as f64).sqrt() * prev)
}

/// Shared order-40 rule.
pub fn standard() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(ORDER))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Golub–Welsch.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(order, order);
    for k in 1..order {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(LEGENDRE_ORDER))
}

/// `E[f(z)]` for `z ~ N(mean, variance)` and `f` bounded with features of
/// unit width, such as the sigmoid and its derivative.
pub fn expectation<F: Fn(f64) -> f64>(mean: f64, variance: f64, f: F) -> f64 {
    if variance <= HERMITE_MAX_VARIANCE {
        return standard().expectation(mean, variance, f);
    }
    let sd = variance.sqrt();
    // panels at most one standard deviation and two units of z wide
    let panels = (2.0 * WINDOW / (2.0 / sd).min(1.0)).ceil() as usize;
    let h = 2.0 * WINDOW / panels as f64;
    let (nodes, weights) = legendre();
    let mut total = 0.0;
    for k in 0..panels {
        let center = -WINDOW + (k as f64 + 0.5) * h;
        for (&x, &w) in nodes.iter().zip(weights) {
            let t = center + 0.5 * h * x;
            total += w * (-0.5 * t * t).exp() * f(mean + sd * t);
        }
    }
    total * 0.5 * h / (2.0 * std::f64::consts::PI).sqrt()
}
