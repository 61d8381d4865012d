//! Laplace approximation around the MAP estimate.

use nalgebra::{DMatrix, DVector};

use super::GaussianMoments;
use crate::ensemble::symmetrize;
use crate::error::{Error, Result};
use crate::model::{grad_loss, hessian_loss, neg_log_posterior, Dataset, GaussianPrior};

/// Newton iteration on the negative log-posterior with backtracking.
///
/// Steps are solved as `(I + P_prior H) δ = P_prior g`, which stays
/// well-posed when the prior is nearly degenerate. Returns the MAP
/// estimate and the inverse Hessian `(I + P_prior H)^{-1} P_prior` as the
/// Gaussian approximation.
pub fn laplace_fit(
    data: &Dataset,
    prior: &GaussianPrior,
    tolerance: f64,
    max_iterations: usize,
) -> Result<GaussianMoments> {
    let d = prior.dim();
    if data.dim() != d {
        return Err(Error::Dimension(format!(
            "data has dimension {}, prior has {d}",
            data.dim()
        )));
    }
    let p0 = prior.covariance();
    let system = |theta: &DVector<f64>| -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(d, d) + p0 * hessian_loss(theta, data)?)
    };
    let mut theta = prior.mean().clone();
    let mut objective = neg_log_posterior(&theta, data, prior)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let grad = grad_loss(&theta, data)? + prior.precision_apply(&(&theta - prior.mean()));
        // gradient preconditioned by the prior covariance
        let scaled = p0 * &grad;
        residual = scaled.norm() / (1.0 + theta.norm());
        if residual < tolerance {
            let sys = system(&theta)?;
            return finish(theta, sys, p0);
        }
        let delta = system(&theta)?
            .lu()
            .solve(&scaled)
            .ok_or_else(|| Error::Invalid("singular Newton system".into()))?;
        let mut step = 1.0;
        loop {
            let candidate = &theta - &delta * step;
            let value = neg_log_posterior(&candidate, data, prior)?;
            // objective differences below rounding cannot be resolved
            let slack = 1e-12 * objective.abs().max(1.0);
            if value <= objective - 1e-4 * step * grad.dot(&delta) + slack || step < 1e-10 {
                theta = candidate;
                objective = value;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual,
        last_iterate: theta.as_slice().to_vec(),
    })
}

fn finish(theta: DVector<f64>, system: DMatrix<f64>, p0: &DMatrix<f64>) -> Result<GaussianMoments> {
    let mut covariance = system
        .lu()
        .solve(p0)
        .ok_or_else(|| Error::Invalid("singular Laplace system".into()))?;
    symmetrize(&mut covariance);
    GaussianMoments::new(theta, covariance)
}

/// Probit approximation `σ(a / √(1 + πv/8))` of `E[σ(θᵀφ)]` for
/// `θᵀφ ~ N(a, v)`.
pub fn probit_predictive(moments: &GaussianMoments, features: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (a, v) = super::projections(moments, features)?;
    let scale = std::f64::consts::PI / 8.0;
    Ok(DVector::from_iterator(
        a.len(),
        a.iter()
            .zip(v.iter())
            .map(|(&a, &v)| crate::model::sigmoid(a / (1.0 + scale * v).sqrt())),
    ))
}
