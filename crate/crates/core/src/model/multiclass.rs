//! Softmax extension. The `K` per-class weight vectors are stacked into one
//! parameter of length `K·D` (class `k` occupies `[k·D, (k+1)·D)`), so the
//! samplers run unchanged on the stacked vector.

use nalgebra::{DMatrix, DVector, DVectorView};

use super::{tamed_curvature, DriftTerms, GaussianPrior, Likelihood, Taming};
use crate::ensemble::symmetrize;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Max-shifted softmax of the logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities `e^{z_k} / Σ_j e^{z_j}` with `z_k = θ_kᵀφ`.
pub fn softmax_probs(stacked: DVectorView<'_, f64>, classes: usize, phi: DVectorView<'_, f64>) -> Result<Vec<f64>> {
    if classes < 2 {
        return Err(Error::Invalid(format!("need at least 2 classes, got {classes}")));
    }
    let d = phi.len();
    if stacked.len() != classes * d {
        return Err(Error::Dimension(format!(
            "stacked parameter has length {}, expected {classes} x {d}",
            stacked.len()
        )));
    }
    Ok(softmax(&logits(stacked, classes, phi)))
}

fn logits(stacked: DVectorView<'_, f64>, classes: usize, phi: DVectorView<'_, f64>) -> Vec<f64> {
    let d = phi.len();
    (0..classes)
        .map(|k| stacked.rows(k * d, d).dot(&phi))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl MulticlassDataset {
    /// Labels are class indices in `0..classes`.
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {classes}")));
        }
        if features.ncols() == 0 || features.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature columns but {} labels",
                features.ncols(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if let Some((n, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Invalid(format!("label {n} is {l}, expected < {classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Negative log-likelihood `−Σ_n log p_{n, d_n}`, computed as
    /// `log Σ_k e^{z_k} − z_{d_n}`.
    pub fn loss(&self, stacked: &DVector<f64>) -> Result<f64> {
        let d = self.feature_dim();
        if stacked.len() != self.classes * d {
            return Err(Error::Dimension(format!(
                "stacked parameter has length {}, expected {} x {d}",
                stacked.len(),
                self.classes
            )));
        }
        let mut total = 0.0;
        for (n, &label) in self.labels.iter().enumerate() {
            let z = logits(stacked.as_view(), self.classes, self.features.column(n));
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - z[label];
        }
        Ok(total)
    }

    /// Gradient and Hessian of [`loss`](Self::loss) at one parameter.
    pub fn grad_hessian(&self, stacked: DVectorView<'_, f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.feature_dim();
        let k = self.classes;
        let mut grad = DVector::zeros(k * d);
        let mut hess = DMatrix::zeros(k * d, k * d);
        for (n, &label) in self.labels.iter().enumerate() {
            let phi = self.features.column(n);
            let p = softmax(&logits(stacked, k, phi));
            let outer = phi * phi.transpose();
            for a in 0..k {
                let resid = p[a] - if a == label { 1.0 } else { 0.0 };
                grad.rows_mut(a * d, d).axpy(resid, &phi, 1.0);
                for b in 0..k {
                    let w = p[a] * (if a == b { 1.0 } else { 0.0 } - p[b]);
                    let mut block = hess.view_mut((a * d, b * d), (d, d));
                    block += &outer * w;
                }
            }
        }
        (grad, hess)
    }
}

impl Likelihood for MulticlassDataset {
    fn param_dim(&self) -> usize {
        self.classes * self.feature_dim()
    }

    /// Only full taming is defined here: the diagonal shortcut relies on the
    /// binary model's diagonal `R`.
    fn drift_terms(
        &self,
        particles: &DMatrix<f64>,
        covariance: &DMatrix<f64>,
        step_size: f64,
        taming: Taming,
        exec: Exec,
    ) -> Result<DriftTerms> {
        if taming == Taming::Diagonal {
            return Err(Error::Invalid(
                "diagonal taming is only defined for the binary model".into(),
            ));
        }
        if particles.nrows() != self.param_dim() {
            return Err(Error::Dimension(format!(
                "particles have dimension {}, model expects {}",
                particles.nrows(),
                self.param_dim()
            )));
        }
        let j = particles.ncols();
        let per_particle = exec.map(j, |i| self.grad_hessian(particles.column(i)));
        let dim = self.param_dim();
        let mut grad_mean = DVector::zeros(dim);
        let mut hess_mean = DMatrix::zeros(dim, dim);
        for (i, (g, h)) in per_particle.iter().enumerate() {
            if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("likelihood at particle {i}")));
            }
            grad_mean += g;
            hess_mean += h;
        }
        grad_mean /= j as f64;
        hess_mean /= j as f64;
        symmetrize(&mut hess_mean);
        Ok(DriftTerms {
            grad_mean,
            curvature: tamed_curvature(&hess_mean, covariance, step_size)?,
        })
    }
}

/// `K` independent copies of a per-class prior on the diagonal blocks.
pub fn block_diagonal_prior(per_class: &GaussianPrior, classes: usize) -> Result<GaussianPrior> {
    let d = per_class.dim();
    let mut mean = DVector::zeros(classes * d);
    let mut cov = DMatrix::zeros(classes * d, classes * d);
    for k in 0..classes {
        mean.rows_mut(k * d, d).copy_from(per_class.mean());
        cov.view_mut((k * d, k * d), (d, d)).copy_from(per_class.covariance());
    }
    GaussianPrior::new(mean, cov)
}

/// Ensemble-averaged class probabilities for each column of `features`.
pub fn predictive_probs(
    particles: &DMatrix<f64>,
    classes: usize,
    features: &DMatrix<f64>,
) -> Result<Vec<Vec<f64>>> {
    let j = particles.ncols() as f64;
    features
        .column_iter()
        .map(|phi| {
            let mut acc = vec![0.0; classes];
            for theta in particles.column_iter() {
                let p = softmax_probs(theta, classes, phi)?;
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
            }
            Ok(acc.into_iter().map(|a| a / j).collect())
        })
        .collect()
}
