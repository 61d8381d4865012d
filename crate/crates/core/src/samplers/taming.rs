use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{diagonal_taming, Taming};

/// The `N × N` taming matrix `M = (Δs ΦᵀPΦ + μ[R]^{-1})^{-1}`.
///
/// Full mode evaluates it as `R^{1/2} (I + Δs R^{1/2}ΦᵀPΦR^{1/2})^{-1} R^{1/2}`,
/// which stays well defined when some `r_n` vanish. Diagonal mode keeps only
/// the reciprocal of the diagonal of `Δs ΦᵀPΦ + μ[R]^{-1}`.
pub fn taming_matrix(
    covariance: &DMatrix<f64>,
    features: &DMatrix<f64>,
    r_mean: &DVector<f64>,
    step_size: f64,
    taming: Taming,
) -> Result<DMatrix<f64>> {
    let (d, n) = features.shape();
    if covariance.shape() != (d, d) || r_mean.len() != n {
        return Err(Error::Dimension(format!(
            "features {d}x{n}, covariance {}x{}, {} curvature weights",
            covariance.nrows(),
            covariance.ncols(),
            r_mean.len()
        )));
    }
    if !(step_size >= 0.0) {
        return Err(Error::Invalid(format!("step size must be >= 0, got {step_size}")));
    }
    if let Some(r) = r_mean.iter().find(|r| !(0.0..=0.25).contains(*r)) {
        return Err(Error::Invalid(format!("curvature weight {r} outside [0, 1/4]")));
    }
    match taming {
        Taming::Diagonal => Ok(DMatrix::from_diagonal(&diagonal_taming(
            features, covariance, r_mean, step_size,
        ))),
        Taming::Full => {
            let sqrt_r = r_mean.map(f64::sqrt);
            let mut b = features.clone();
            for (mut col, &s) in b.column_iter_mut().zip(sqrt_r.iter()) {
                col *= s;
            }
            let inner = DMatrix::identity(n, n) + b.transpose() * covariance * &b * step_size;
            let chol = Cholesky::new(inner)
                .ok_or_else(|| Error::NonFinite("taming matrix is not positive definite".into()))?;
            let mut m = chol.inverse();
            for i in 0..n {
                for k in 0..n {
                    m[(i, k)] *= sqrt_r[i] * sqrt_r[k];
                }
            }
            Ok(m)
        }
    }
}
