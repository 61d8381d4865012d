//! Predictive probabilities, confidences and confidence-versus-distance
//! curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::meanfield::{probit_predictive, GaussianMoments};
use crate::model::sigmoid;

/// Where the predictive distribution comes from.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// `(1/J) Σ_j σ(θ_jᵀφ)`.
    Ensemble(&'a Ensemble),
    /// Probit approximation under Gaussian moments (Laplace output).
    Probit(&'a GaussianMoments),
    /// `σ(θᵀφ)` at a single point estimate.
    Point(&'a DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probability of class 1.
    pub probability: f64,
    /// `max(p, 1 − p)`.
    pub confidence: f64,
}

impl Prediction {
    fn new(probability: f64) -> Self {
        Self {
            probability,
            confidence: probability.max(1.0 - probability),
        }
    }
}

/// One prediction per column of `features`.
pub fn predictive_confidence(predictor: Predictor<'_>, features: &DMatrix<f64>) -> Result<Vec<Prediction>> {
    if features.ncols() == 0 {
        return Err(Error::Invalid("empty test set".into()));
    }
    let dim = match predictor {
        Predictor::Ensemble(e) => e.dim(),
        Predictor::Probit(m) => m.dim(),
        Predictor::Point(t) => t.len(),
    };
    if features.nrows() != dim {
        return Err(Error::Dimension(format!(
            "test features have dimension {}, predictor has {dim}",
            features.nrows()
        )));
    }
    let probs: DVector<f64> = match predictor {
        Predictor::Ensemble(e) => {
            let logits = e.particles().tr_mul(features);
            DVector::from_iterator(
                features.ncols(),
                logits
                    .column_iter()
                    .map(|c| c.iter().map(|&z| sigmoid(z)).sum::<f64>() / e.size() as f64),
            )
        }
        Predictor::Probit(m) => probit_predictive(m, features)?,
        Predictor::Point(t) => features.tr_mul(t).map(sigmoid),
    };
    Ok(probs.iter().map(|&p| Prediction::new(p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCurve {
    pub centers: Vec<f64>,
    pub mean_confidence: Vec<f64>,
    pub std_confidence: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `δ = min_n ‖x − x_n‖₂` for each column of `test` against the columns of
/// `train`, in input space.
pub fn nearest_distances(train: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<Vec<f64>> {
    if train.nrows() != test.nrows() {
        return Err(Error::Dimension(format!(
            "training points have dimension {}, test points {}",
            train.nrows(),
            test.nrows()
        )));
    }
    if train.ncols() == 0 {
        return Err(Error::Invalid("no training points".into()));
    }
    Ok(test
        .column_iter()
        .map(|x| {
            train
                .column_iter()
                .map(|t| (x - t).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Bins confidences by distance into `bins` equal-width bins over
/// `[0, max δ]`. Bin 0 holds `δ = 0`; empty bins report NaN statistics.
pub fn ood_confidence_curve(distances: &[f64], confidences: &[f64], bins: usize) -> Result<OodCurve> {
    if distances.is_empty() || bins == 0 {
        return Err(Error::Invalid("need a nonempty grid and at least one bin".into()));
    }
    if distances.len() != confidences.len() {
        return Err(Error::Dimension(format!(
            "{} distances but {} confidences",
            distances.len(),
            confidences.len()
        )));
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut sums = vec![0.0; bins];
    let mut squares = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&d, &c) in distances.iter().zip(confidences) {
        let b = ((d / width) as usize).min(bins - 1);
        sums[b] += c;
        squares[b] += c * c;
        counts[b] += 1;
    }
    let mut mean_confidence = Vec::with_capacity(bins);
    let mut std_confidence = Vec::with_capacity(bins);
    for b in 0..bins {
        let n = counts[b] as f64;
        let mean = sums[b] / n;
        mean_confidence.push(mean);
        std_confidence.push((squares[b] / n - mean * mean).max(0.0).sqrt());
    }
    Ok(OodCurve {
        centers: (0..bins).map(|b| (b as f64 + 0.5) * width).collect(),
        mean_confidence,
        std_confidence,
        counts,
    })
}

/// Regular `side × side` grid over the box centred on the training
/// bounding box and `scale` times as wide. Input must be 2-D.
pub fn box_grid(train: &DMatrix<f64>, scale: f64, side: usize) -> Result<DMatrix<f64>> {
    if train.nrows() != 2 || train.ncols() == 0 || side < 2 {
        return Err(Error::Invalid("box grid needs 2-D training points and side >= 2".into()));
    }
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for i in 0..2 {
        let row = train.row(i);
        let (a, b) = (row.min(), row.max());
        let centre = 0.5 * (a + b);
        let half = 0.5 * scale * (b - a).max(1e-12);
        lo[i] = centre - half;
        hi[i] = centre + half;
    }
    let step = |i: usize, k: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (side - 1) as f64;
    Ok(DMatrix::from_fn(2, side * side, |i, n| {
        if i == 0 {
            step(0, n % side)
        } else {
            step(1, n / side)
        }
    }))
}
