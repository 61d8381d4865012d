//! Bayesian logistic regression: likelihood quantities, Gaussian prior and
//! the ensemble-averaged drift terms consumed by the samplers.

pub mod multiclass;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::ensemble::symmetrize;
use crate::error::{Error, Result};
use crate::meanfield::GaussianMoments;
use crate::par::Exec;

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow or cancellation.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary classification data: features `Φ` (`D × N`, one column per
/// sample) and labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.ncols() == 0 || features.nrows() == 0 {
            return Err(Error::Invalid(format!(
                "dataset needs D >= 1 and N >= 1, got D = {}, N = {}",
                features.nrows(),
                features.ncols()
            )));
        }
        if features.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature columns but {} labels",
                features.ncols(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if let Some((n, &d)) = labels
            .iter()
            .enumerate()
            .find(|(_, &d)| d != 0.0 && d != 1.0)
        {
            return Err(Error::Invalid(format!(
                "label {n} is {d}, binary labels must be 0 or 1"
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }
}

/// `N(mean, covariance)` with a cached Cholesky factor. The precision is
/// only ever applied through triangular solves.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    diagonal: bool,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "prior mean has dimension {d}, covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior moments".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Invalid("prior covariance is not symmetric".into()));
        }
        let mut covariance = covariance;
        symmetrize(&mut covariance);
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Invalid("prior covariance is not positive definite".into()))?;
        let diagonal = (0..d).all(|i| (0..d).all(|k| i == k || covariance[(i, k)] == 0.0));
        Ok(Self {
            mean,
            covariance,
            chol,
            diagonal,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::isotropic(dim, 1.0).expect("identity is SPD")
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(dim),
            DMatrix::identity(dim, dim) * variance,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `P_prior^{-1} v`.
    pub fn precision_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `P_prior^{-1} B` column by column.
    pub fn precision_apply_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Dense precision matrix. Only used by diagnostics.
    pub fn precision(&self) -> DMatrix<f64> {
        let mut p = self.chol.inverse();
        symmetrize(&mut p);
        p
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        }
    }
}

/// Per-sample likelihood quantities at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    /// `y_n = σ(⟨θ, φ^n⟩)`
    pub y: DVector<f64>,
    /// `r_n = y_n (1 − y_n)`
    pub r_diag: DVector<f64>,
    pub loss: f64,
}

fn check_dim(theta: &DVector<f64>, data: &Dataset) -> Result<()> {
    if theta.len() != data.dim() {
        return Err(Error::Dimension(format!(
            "parameter has dimension {}, features have {}",
            theta.len(),
            data.dim()
        )));
    }
    Ok(())
}

pub fn evaluate(theta: &DVector<f64>, data: &Dataset) -> Result<LikelihoodEval> {
    check_dim(theta, data)?;
    let z = data.features.tr_mul(theta);
    let y = z.map(sigmoid);
    let r_diag = y.map(|p| p * (1.0 - p));
    // −d ln σ(z) − (1 − d) ln(1 − σ(z)) = softplus(z) − d z
    let loss = z
        .iter()
        .zip(data.labels.iter())
        .map(|(&z, &d)| softplus(z) - d * z)
        .sum();
    Ok(LikelihoodEval { y, r_diag, loss })
}

/// Cross-entropy loss `Ψ(θ)`.
pub fn cross_entropy(theta: &DVector<f64>, data: &Dataset) -> Result<f64> {
    Ok(evaluate(theta, data)?.loss)
}

/// `∇Ψ(θ) = Φ (y(θ) − d)`.
pub fn grad_loss(theta: &DVector<f64>, data: &Dataset) -> Result<DVector<f64>> {
    let eval = evaluate(theta, data)?;
    Ok(&data.features * (eval.y - &data.labels))
}

/// `D²Ψ(θ) = Φ R(θ) Φᵀ`.
pub fn hessian_loss(theta: &DVector<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    let eval = evaluate(theta, data)?;
    Ok(weighted_gram(&data.features, &eval.r_diag))
}

/// `Φ diag(w) Φᵀ`, exactly symmetric.
pub(crate) fn weighted_gram(features: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = features.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(weights.iter()) {
        col *= w;
    }
    let mut g = scaled * features.transpose();
    symmetrize(&mut g);
    g
}

fn check_prior(data_dim: usize, prior: &GaussianPrior) -> Result<()> {
    if prior.dim() != data_dim {
        return Err(Error::Dimension(format!(
            "prior has dimension {}, features have {data_dim}",
            prior.dim()
        )));
    }
    Ok(())
}

/// `Ψ(θ) + ½ (θ − m_prior)ᵀ P_prior^{-1} (θ − m_prior)`; the Gaussian
/// normalising constant is dropped.
pub fn neg_log_posterior(theta: &DVector<f64>, data: &Dataset, prior: &GaussianPrior) -> Result<f64> {
    check_prior(data.dim(), prior)?;
    let diff = theta - prior.mean();
    Ok(cross_entropy(theta, data)? + 0.5 * diff.dot(&prior.precision_apply(&diff)))
}

pub fn grad_neg_log_posterior(
    theta: &DVector<f64>,
    data: &Dataset,
    prior: &GaussianPrior,
) -> Result<DVector<f64>> {
    check_prior(data.dim(), prior)?;
    let diff = theta - prior.mean();
    Ok(grad_loss(theta, data)? + prior.precision_apply(&diff))
}

/// How the curvature term of the likelihood update is tamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Taming {
    /// Invert the full `N × N` taming matrix.
    #[default]
    Full,
    /// Invert only its diagonal.
    Diagonal,
}

/// Ensemble-averaged quantities needed for one likelihood update.
#[derive(Debug, Clone)]
pub struct DriftTerms {
    /// `μ[∇Ψ]`
    pub grad_mean: DVector<f64>,
    /// Tamed curvature `G` with `P G = P Φ M Φᵀ`; tends to `μ[D²Ψ]` as the
    /// step size goes to zero.
    pub curvature: DMatrix<f64>,
}

/// A likelihood the ensemble samplers can drive.
pub trait Likelihood: Sync {
    fn param_dim(&self) -> usize;

    fn drift_terms(
        &self,
        particles: &DMatrix<f64>,
        covariance: &DMatrix<f64>,
        step_size: f64,
        taming: Taming,
        exec: Exec,
    ) -> Result<DriftTerms>;
}

/// Ensemble averages `μ[y]` and `μ[R]` (the diagonal of `R`).
pub fn ensemble_likelihood_means(
    data: &Dataset,
    particles: &DMatrix<f64>,
    exec: Exec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if particles.nrows() != data.dim() {
        return Err(Error::Dimension(format!(
            "particles have dimension {}, features have {}",
            particles.nrows(),
            data.dim()
        )));
    }
    let j = particles.ncols();
    let per_particle = exec.map(j, |k| {
        let z = data.features.tr_mul(&particles.column(k));
        z.map(sigmoid)
    });
    let n = data.len();
    let mut y_mean = DVector::zeros(n);
    let mut r_mean = DVector::zeros(n);
    for (k, y) in per_particle.iter().enumerate() {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("likelihood at particle {k}")));
        }
        y_mean += y;
        r_mean += y.map(|p| p * (1.0 - p));
    }
    y_mean /= j as f64;
    r_mean /= j as f64;
    Ok((y_mean, r_mean))
}

/// Solves `(I + h H P) G = H` for the tamed curvature. `I + h H P` is similar
/// to `I + h H^{1/2} P H^{1/2}`, whose eigenvalues are at least one.
pub(crate) fn tamed_curvature(
    hessian: &DMatrix<f64>,
    covariance: &DMatrix<f64>,
    step_size: f64,
) -> Result<DMatrix<f64>> {
    let d = hessian.nrows();
    let system = DMatrix::identity(d, d) + hessian * covariance * step_size;
    let mut g = system
        .lu()
        .solve(hessian)
        .ok_or_else(|| Error::NonFinite("taming system is singular".into()))?;
    symmetrize(&mut g);
    Ok(g)
}

impl Likelihood for Dataset {
    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn drift_terms(
        &self,
        particles: &DMatrix<f64>,
        covariance: &DMatrix<f64>,
        step_size: f64,
        taming: Taming,
        exec: Exec,
    ) -> Result<DriftTerms> {
        let (y_mean, r_mean) = ensemble_likelihood_means(self, particles, exec)?;
        let grad_mean = &self.features * (y_mean - &self.labels);
        let curvature = match taming {
            Taming::Full => {
                let hessian = weighted_gram(&self.features, &r_mean);
                tamed_curvature(&hessian, covariance, step_size)?
            }
            Taming::Diagonal => {
                let m_diag = diagonal_taming(&self.features, covariance, &r_mean, step_size);
                weighted_gram(&self.features, &m_diag)
            }
        };
        Ok(DriftTerms {
            grad_mean,
            curvature,
        })
    }
}

/// `r_n / (1 + h r_n φ_nᵀ P φ_n)`: the reciprocal of the diagonal of
/// `h ΦᵀPΦ + μ[R]^{-1}`, written so that `r_n = 0` is harmless.
pub(crate) fn diagonal_taming(
    features: &DMatrix<f64>,
    covariance: &DMatrix<f64>,
    r_mean: &DVector<f64>,
    step_size: f64,
) -> DVector<f64> {
    let p_phi = covariance * features;
    DVector::from_iterator(
        features.ncols(),
        (0..features.ncols()).map(|n| {
            let q = features.column(n).dot(&p_phi.column(n));
            r_mean[n] / (1.0 + step_size * r_mean[n] * q)
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn loss_matches_direct_formula() {
        let data = Dataset::new(dmatrix![0.5, -1.0, 2.0], DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        let theta = DVector::from_element(1, 0.8);
        let direct: f64 = [(0.4, 1.0), (-0.8, 0.0), (1.6, 1.0)]
            .iter()
            .map(|&(z, d): &(f64, f64)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(d * p.ln() + (1.0 - d) * (1.0 - p).ln())
            })
            .sum();
        assert!((cross_entropy(&theta, &data).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn loss_slope_follows_gradient_far_out() {
        // a misclassified sample at z = 60: loss grows linearly with slope 1
        let data = Dataset::new(dmatrix![1.0], DVector::from_element(1, 0.0)).unwrap();
        let at = |t: f64| cross_entropy(&DVector::from_element(1, t), &data).unwrap();
        assert!((at(60.0) - 60.0).abs() < 1e-12);
        assert!(((at(60.0 + 1e-5) - at(60.0 - 1e-5)) / 2e-5 - 1.0).abs() < 1e-6);
        assert!(at(-800.0).abs() < 1e-300 && at(800.0) == 800.0);
    }

    fn random_instance(seed: u64, d: usize, n: usize) -> (Dataset, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let features = DMatrix::from_fn(d, n, |_, _| normal());
        let theta = DVector::from_fn(d, |_, _| normal());
        let labels = DVector::from_fn(n, |i, _| (i % 2) as f64);
        (Dataset::new(features, labels).unwrap(), theta)
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(1.0 - sigmoid(40.0) < 1e-17);
        assert!(sigmoid(-700.0) > 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        for z in [-30.0, -2.5, -0.1, 0.3, 7.0, 35.0] {
            assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_at_origin_is_n_ln2() {
        let (data, _) = random_instance(1, 3, 4);
        let loss = cross_entropy(&DVector::zeros(3), &data).unwrap();
        assert!((loss - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_single_sample() {
        let data = Dataset::new(dmatrix![1.0], DVector::from_element(1, 1.0)).unwrap();
        let theta = DVector::from_element(1, 3f64.ln());
        let loss = cross_entropy(&theta, &data).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-14);
        assert!((loss - 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_along_negative_gradient() {
        let (data, theta) = random_instance(5, 4, 9);
        let g = grad_loss(&theta, &data).unwrap();
        let before = cross_entropy(&theta, &data).unwrap();
        let after = cross_entropy(&(&theta - &g * 1e-4), &data).unwrap();
        assert!(after < before);
    }

    #[test]
    fn gradient_vanishes_for_balanced_duplicates() {
        let data = Dataset::new(dmatrix![1.0, 1.0; -2.0, -2.0], DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let g = grad_loss(&DVector::zeros(2), &data).unwrap();
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn gradient_vanishes_when_labels_equal_probabilities() {
        // Soft labels are outside the binary contract, so build the identity directly.
        let (data, theta) = random_instance(2, 3, 5);
        let eval = evaluate(&theta, &data).unwrap();
        let g = data.features() * (&eval.y - &eval.y);
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (data, theta) = random_instance(7, 5, 7);
        let g = grad_loss(&theta, &data).unwrap();
        let h = 1e-5;
        for i in 0..5 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (cross_entropy(&tp, &data).unwrap() - cross_entropy(&tm, &data).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn hessian_at_origin_is_quarter_gram() {
        let (data, _) = random_instance(4, 3, 6);
        let h = hessian_loss(&DVector::zeros(3), &data).unwrap();
        let expected = data.features() * data.features().transpose() * 0.25;
        assert!((h - expected).amax() < 1e-12);
    }

    #[test]
    fn hessian_scalar_instance() {
        let data = Dataset::new(dmatrix![2.0], DVector::from_element(1, 1.0)).unwrap();
        // y = 0.75 requires 2θ = ln 3
        let theta = DVector::from_element(1, 3f64.ln() / 2.0);
        let h = hessian_loss(&theta, &data).unwrap();
        assert!((h[(0, 0)] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn hessian_is_psd() {
        for seed in 0..10 {
            let (data, theta) = random_instance(100 + seed, 6, 4);
            let h = hessian_loss(&theta, &data).unwrap();
            assert_eq!(h, h.transpose());
            let min = h.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn neg_log_posterior_cases() {
        let data = Dataset::new(dmatrix![1.0], DVector::from_element(1, 0.0)).unwrap();
        let prior = GaussianPrior::standard(1);
        let v = neg_log_posterior(&DVector::zeros(1), &data, &prior).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);

        // zero features: Ψ is the constant N ln 2, leaving the quadratic term
        let flat = Dataset::new(DMatrix::zeros(2, 1), DVector::from_element(1, 1.0)).unwrap();
        let theta = DVector::from_vec(vec![1.5, -0.5]);
        let v = neg_log_posterior(&theta, &flat, &GaussianPrior::standard(2)).unwrap();
        assert!((v - 2f64.ln() - 0.5 * theta.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn posterior_gradient_matches_central_differences() {
        let (data, theta) = random_instance(9, 4, 6);
        let cov = dmatrix![2.0, 0.3, 0.0, 0.0; 0.3, 1.0, 0.1, 0.0; 0.0, 0.1, 0.5, 0.0; 0.0, 0.0, 0.0, 1.5];
        let prior = GaussianPrior::new(DVector::from_vec(vec![0.1, 0.0, -0.2, 0.3]), cov).unwrap();
        let g = grad_neg_log_posterior(&theta, &data, &prior).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (neg_log_posterior(&tp, &data, &prior).unwrap()
                - neg_log_posterior(&tm, &data, &prior).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            Dataset::new(dmatrix![1.0, 2.0], DVector::from_vec(vec![1.0, 2.0])),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            Dataset::new(dmatrix![1.0, 2.0], DVector::from_vec(vec![1.0])),
            Err(Error::Dimension(_))
        ));
        assert!(GaussianPrior::new(DVector::zeros(2), dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
        let data = Dataset::new(dmatrix![1.0; 1.0], DVector::from_element(1, 1.0)).unwrap();
        assert!(matches!(
            neg_log_posterior(&DVector::zeros(2), &data, &GaussianPrior::standard(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn full_and_diagonal_taming_agree_for_orthogonal_features() {
        // Orthogonal feature columns with a diagonal covariance make ΦᵀPΦ diagonal.
        let features = dmatrix![2.0, 0.0, 0.0; 0.0, -1.0, 0.0; 0.0, 0.0, 0.5];
        let data = Dataset::new(features, DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        let particles = dmatrix![0.1, -0.4, 0.3; 0.2, 0.0, -0.1; 1.0, 0.5, -0.5];
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 1.3, 0.2]));
        let full = data.drift_terms(&particles, &cov, 0.3, Taming::Full, Exec::Sequential).unwrap();
        let diag = data.drift_terms(&particles, &cov, 0.3, Taming::Diagonal, Exec::Sequential).unwrap();
        assert!((full.curvature - diag.curvature).amax() < 1e-14);
        assert_eq!(full.grad_mean, diag.grad_mean);
    }
}
