//! Synthetic data: the known-parameter logistic problem, a 2-D two-cluster
//! problem, and a fixed random ReLU feature map standing in for a trained
//! network's last hidden layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{sigmoid, Dataset, GaussianPrior};
use crate::rng::{SeedStreams, DATASET, PRIOR_SPD};
use crate::samplers::standard_normal_matrix;

/// Give up re-drawing degenerate label vectors after this many attempts.
const MAX_REDRAWS: u64 = 1000;

/// `θ_ref ~ N(0, I_D)`, `x_n ~ N(0, I_D)`, `d_n ~ Bernoulli(σ(θ_refᵀ x_n))`.
pub fn synthesize_logistic_dataset(dim: usize, samples: usize, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    if dim == 0 || samples == 0 {
        return Err(Error::Invalid(format!(
            "need D >= 1 and N >= 1, got D = {dim}, N = {samples}"
        )));
    }
    let streams = SeedStreams::new(seed);
    let mut rng = streams.rng(DATASET, 0);
    let theta = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let data = synthesize_with_parameter(&theta, samples, seed)?;
    Ok((data, theta))
}

/// Same generator with the reference parameter supplied by the caller.
///
/// If every label comes out equal the features and labels are re-drawn
/// from the next stream index. With `N = 1` that can never succeed, so the
/// single draw is returned as is.
pub fn synthesize_with_parameter(theta: &DVector<f64>, samples: usize, seed: u64) -> Result<Dataset> {
    let dim = theta.len();
    if dim == 0 || samples == 0 {
        return Err(Error::Invalid(format!(
            "need D >= 1 and N >= 1, got D = {dim}, N = {samples}"
        )));
    }
    let streams = SeedStreams::new(seed);
    for attempt in 1..=MAX_REDRAWS {
        let mut rng = streams.rng(DATASET, attempt);
        let features = standard_normal_matrix(dim, samples, &mut rng);
        let logits = features.tr_mul(theta);
        let labels = logits.map(|z| if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 });
        let positives = labels.sum();
        if samples == 1 || (positives > 0.0 && positives < samples as f64) {
            return Dataset::new(features, labels);
        }
    }
    Err(Error::Invalid(format!(
        "labels stayed degenerate after {MAX_REDRAWS} draws"
    )))
}

/// `AᵀA + 1e-3·D·I` with `A` a standard-normal `D × D` matrix, zero mean.
pub fn random_spd_prior(dim: usize, seed: u64) -> Result<GaussianPrior> {
    if dim == 0 {
        return Err(Error::Invalid("prior dimension must be positive".into()));
    }
    let mut rng = SeedStreams::new(seed).rng(PRIOR_SPD, 0);
    let a = standard_normal_matrix(dim, dim, &mut rng);
    let cov = a.tr_mul(&a) + DMatrix::identity(dim, dim) * (1e-3 * dim as f64);
    GaussianPrior::new(DVector::zeros(dim), cov)
}

/// Two Gaussian blobs in the plane with centres `±(separation/2, 0)` and
/// unit-variance noise scaled by `spread`. Returns a `2 × N` matrix and
/// labels (first half 0, second half 1).
pub fn two_clusters(samples: usize, separation: f64, spread: f64, seed: u64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if samples < 2 {
        return Err(Error::Invalid(format!("need at least 2 points, got {samples}")));
    }
    let mut rng = SeedStreams::new(seed).rng(DATASET, 0);
    let noise = standard_normal_matrix(2, samples, &mut rng);
    let half = samples / 2;
    let mut points = noise * spread;
    let mut labels = DVector::zeros(samples);
    for n in 0..samples {
        let sign = if n < half { -1.0 } else { 1.0 };
        points[(0, n)] += sign * 0.5 * separation;
        if n >= half {
            labels[n] = 1.0;
        }
    }
    Ok((points, labels))
}

/// `φ(x) = [ReLU(W x + b) / √width; 1]` with fixed Gaussian `W`. Unit `k`
/// has its hinge through a point `c_k` drawn uniformly from the cube
/// `[−hinge_radius, hinge_radius]^d`, i.e. `b_k = −w_kᵀ c_k`, so some
/// units switch on only away from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluFeatures {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ReluFeatures {
    pub fn new(input_dim: usize, width: usize, hinge_radius: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::Invalid("feature map needs positive input and width".into()));
        }
        if !(hinge_radius >= 0.0) || !hinge_radius.is_finite() {
            return Err(Error::Invalid(format!("hinge radius must be finite and >= 0, got {hinge_radius}")));
        }
        let mut rng = SeedStreams::new(seed).rng("relu-features", 0);
        let weights = standard_normal_matrix(width, input_dim, &mut rng);
        let hinges = DMatrix::from_fn(input_dim, width, |_, _| hinge_radius * (2.0 * rng.random::<f64>() - 1.0));
        let bias = DVector::from_iterator(
            width,
            (0..width).map(|k| -weights.row(k).transpose().dot(&hinges.column(k))),
        );
        Ok(Self { weights, bias })
    }

    /// Output dimension, including the constant feature.
    pub fn dim(&self) -> usize {
        self.weights.nrows() + 1
    }

    /// Maps the columns of `inputs`.
    pub fn apply(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() != self.weights.ncols() {
            return Err(Error::Dimension(format!(
                "inputs have dimension {}, feature map expects {}",
                inputs.nrows(),
                self.weights.ncols()
            )));
        }
        let width = self.weights.nrows();
        let scale = (width as f64).sqrt().recip();
        let mut hidden = &self.weights * inputs;
        let mut out = DMatrix::from_element(width + 1, inputs.ncols(), 1.0);
        for (n, mut col) in hidden.column_iter_mut().enumerate() {
            col += &self.bias;
            for i in 0..width {
                out[(i, n)] = col[i].max(0.0) * scale;
            }
        }
        Ok(out)
    }
}
