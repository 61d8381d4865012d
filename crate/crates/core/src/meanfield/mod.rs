//! Gaussian mean-field limit of the samplers.
//!
//! In the `J → ∞` limit the particle law stays Gaussian, so the dynamics
//! close on the mean and covariance. The expectations `μ_s[y]`, `μ_s[R]`
//! reduce to one-dimensional integrals because `σ(⟨θ, φ^n⟩)` depends on `θ`
//! only through the projection onto `φ^n`.

mod laplace;
pub mod quadrature;

pub use laplace::{laplace_fit, probit_predictive};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::symmetrize;
use crate::error::{Error, Result};
use crate::model::{sigmoid, Dataset, GaussianPrior};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = Self { mean, covariance };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Square, symmetric to `1e-12` relative, eigenvalues `≥ −1e-10 ‖P‖`.
    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "mean has dimension {d}, covariance is {}x{}",
                self.covariance.nrows(),
                self.covariance.ncols()
            )));
        }
        if self.mean.iter().chain(self.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian moments".into()));
        }
        let scale = self.covariance.amax();
        if (&self.covariance - self.covariance.transpose()).amax() > 1e-12 * scale.max(1e-300) {
            return Err(Error::Invalid("covariance is not symmetric".into()));
        }
        let min = self.covariance.clone().symmetric_eigenvalues().min();
        if min < -1e-10 * self.covariance.norm() {
            return Err(Error::Invalid(format!(
                "covariance has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

/// Projected means `a_n = φ^nᵀ m` and variances `v_n = φ^nᵀ P φ^n`.
fn projections(moments: &GaussianMoments, features: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = moments.dim();
    if features.nrows() != d || moments.covariance.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "moments have dimension {d}, features have {} rows",
            features.nrows()
        )));
    }
    let a = features.tr_mul(&moments.mean);
    let p_phi = &moments.covariance * features;
    let mut v = DVector::zeros(features.ncols());
    for n in 0..features.ncols() {
        let vn = features.column(n).dot(&p_phi.column(n));
        if vn < -1e-10 {
            return Err(Error::Invalid(format!(
                "projected variance {vn:.3e} for sample {n} is negative"
            )));
        }
        v[n] = vn.max(0.0);
    }
    Ok((a, v))
}

/// `(μ[y], μ[R])` under `N(m, P)`, one scalar quadrature per sample.
pub fn gaussian_expectations(
    moments: &GaussianMoments,
    features: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (a, v) = projections(moments, features)?;
    let n = features.ncols();
    let mut y_bar = DVector::zeros(n);
    let mut r_bar = DVector::zeros(n);
    for i in 0..n {
        y_bar[i] = quadrature::expectation(a[i], v[i], sigmoid);
        r_bar[i] = quadrature::expectation(a[i], v[i], |z| {
            let s = sigmoid(z);
            s * (1.0 - s)
        });
    }
    Ok((y_bar, r_bar))
}

/// Which moment system to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentVariant {
    /// Likelihood terms only, integrated over `s ∈ [0, 1]`.
    Homotopy,
    /// Likelihood, prior and spread terms; stationary at the equilibrium.
    SecondOrder,
}

/// Right-hand sides of the moment ODEs:
///
/// ```text
/// dm/ds = −PΦ(μ[y] − d) − P P_prior^{-1}(m − m_prior)
/// dP/ds = −PΦ μ[R] ΦᵀP − P P_prior^{-1} P + P
/// ```
///
/// The homotopy variant keeps only the first term of each.
pub fn moment_ode_rhs(
    moments: &GaussianMoments,
    data: &Dataset,
    prior: &GaussianPrior,
    variant: MomentVariant,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if prior.dim() != moments.dim() {
        return Err(Error::Dimension(format!(
            "moments have dimension {}, prior has {}",
            moments.dim(),
            prior.dim()
        )));
    }
    let (y_bar, r_bar) = gaussian_expectations(moments, data.features())?;
    let p = &moments.covariance;
    let p_phi = p * data.features();
    let mut dm = -(&p_phi * (y_bar - data.labels()));
    let mut scaled = p_phi.clone();
    for (mut col, &r) in scaled.column_iter_mut().zip(r_bar.iter()) {
        col *= r;
    }
    let mut dp = -(scaled * p_phi.transpose());
    if variant == MomentVariant::SecondOrder {
        dm -= p * prior.precision_apply(&(&moments.mean - prior.mean()));
        dp -= p * prior.precision_apply_matrix(p);
        dp += p;
    }
    symmetrize(&mut dp);
    Ok((dm, dp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GaussianMoments>,
}

impl MomentTrajectory {
    pub fn last(&self) -> &GaussianMoments {
        self.states.last().expect("trajectory holds the initial state")
    }
}

fn step_count(step_size: f64, horizon: f64) -> Result<usize> {
    if !(step_size > 0.0) || !(horizon > 0.0) || !step_size.is_finite() || !horizon.is_finite() {
        return Err(Error::Invalid(format!(
            "need positive step size and horizon, got {step_size} and {horizon}"
        )));
    }
    Ok(((horizon / step_size).round() as usize).max(1))
}

/// Classical fourth-order Runge–Kutta on the moment ODEs with fixed step
/// (adjusted so the steps land exactly on `horizon`). The covariance is
/// symmetrised after every stage.
pub fn integrate_moments(
    initial: &GaussianMoments,
    data: &Dataset,
    prior: &GaussianPrior,
    step_size: f64,
    horizon: f64,
    variant: MomentVariant,
) -> Result<MomentTrajectory> {
    initial.validate()?;
    if variant == MomentVariant::Homotopy && (horizon - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "the homotopy flow runs over s in [0, 1], got horizon {horizon}"
        )));
    }
    let steps = step_count(step_size, horizon)?;
    let h = horizon / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(initial.clone());
    let mut state = initial.clone();
    for k in 0..steps {
        let stage_time = k as f64 * h;
        let rhs = |s: &GaussianMoments| {
            moment_ode_rhs(s, data, prior, variant).map_err(|e| match e {
                Error::Invalid(reason) => Error::Unstable {
                    time: stage_time,
                    reason,
                },
                e => e,
            })
        };
        let shifted = |base: &GaussianMoments, dm: &DVector<f64>, dp: &DMatrix<f64>, c: f64| {
            let mut cov = &base.covariance + dp * c;
            symmetrize(&mut cov);
            GaussianMoments {
                mean: &base.mean + dm * c,
                covariance: cov,
            }
        };
        let (k1m, k1p) = rhs(&state)?;
        let (k2m, k2p) = rhs(&shifted(&state, &k1m, &k1p, 0.5 * h))?;
        let (k3m, k3p) = rhs(&shifted(&state, &k2m, &k2p, 0.5 * h))?;
        let (k4m, k4p) = rhs(&shifted(&state, &k3m, &k3p, h))?;
        let dm = (k1m + k2m * 2.0 + k3m * 2.0 + k4m) / 6.0;
        let dp = (k1p + k2p * 2.0 + k3p * 2.0 + k4p) / 6.0;
        state = shifted(&state, &dm, &dp, h);
        let time = (k + 1) as f64 * h;
        if state.mean.iter().chain(state.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                time,
                reason: "non-finite moments".into(),
            });
        }
        let min = state.covariance.clone().symmetric_eigenvalues().min();
        if min < -1e-8 {
            return Err(Error::Unstable {
                time,
                reason: format!("covariance eigenvalue {min:.3e}"),
            });
        }
        times.push(time);
        states.push(state.clone());
    }
    Ok(MomentTrajectory { times, states })
}

/// Mean-field drift `b(μ)(η) = A η + c` frozen at one Gaussian law.
#[derive(Debug, Clone)]
struct AffineField {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl AffineField {
    /// `b(η) = −½P(ΦR̄Φᵀ(η − m) + 2Φ(ȳ − d)) − ½P P_prior^{-1}(η + m − 2m_prior) + ½(η − m)`
    fn new(m: &GaussianMoments, data: &Dataset, prior: &GaussianPrior) -> Result<Self> {
        let d = m.dim();
        let (y_bar, r_bar) = gaussian_expectations(m, data.features())?;
        let hessian = crate::model::weighted_gram(data.features(), &r_bar);
        let grad = data.features() * (y_bar - data.labels());
        // P P_prior^{-1} = (P_prior^{-1} P)ᵀ for symmetric P, P_prior
        let p_q = prior.precision_apply_matrix(&m.covariance).transpose();
        let a = -(&m.covariance * &hessian + &p_q) * 0.5 + DMatrix::identity(d, d) * 0.5;
        let c = (&m.covariance * (&hessian * &m.mean - grad * 2.0)) * 0.5
            - (&p_q * (&m.mean - prior.mean() * 2.0)) * 0.5
            - &m.mean * 0.5;
        Ok(Self { a, c })
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.a * x;
        for mut col in out.column_iter_mut() {
            col += &self.c;
        }
        out
    }
}

/// The second-order moment flow integrated once with RK4, keeping the
/// drift at every stage so that any number of particle sets can later be
/// transported along the same law.
#[derive(Debug, Clone)]
pub struct MeanfieldPath {
    step_size: f64,
    stages: Vec<[AffineField; 4]>,
    last: GaussianMoments,
}

impl MeanfieldPath {
    pub fn new(
        initial: &GaussianMoments,
        data: &Dataset,
        prior: &GaussianPrior,
        step_size: f64,
        horizon: f64,
    ) -> Result<Self> {
        initial.validate()?;
        let steps = step_count(step_size, horizon)?;
        let h = horizon / steps as f64;
        let rhs = |m: &GaussianMoments| moment_ode_rhs(m, data, prior, MomentVariant::SecondOrder);
        let advance = |m: &GaussianMoments, k: &(DVector<f64>, DMatrix<f64>), c: f64| {
            let mut cov = &m.covariance + &k.1 * c;
            symmetrize(&mut cov);
            GaussianMoments {
                mean: &m.mean + &k.0 * c,
                covariance: cov,
            }
        };
        let mut m = initial.clone();
        let mut stages = Vec::with_capacity(steps);
        for _ in 0..steps {
            let k1 = rhs(&m)?;
            let m2 = advance(&m, &k1, 0.5 * h);
            let k2 = rhs(&m2)?;
            let m3 = advance(&m, &k2, 0.5 * h);
            let k3 = rhs(&m3)?;
            let m4 = advance(&m, &k3, h);
            let k4 = rhs(&m4)?;
            stages.push([
                AffineField::new(&m, data, prior)?,
                AffineField::new(&m2, data, prior)?,
                AffineField::new(&m3, data, prior)?,
                AffineField::new(&m4, data, prior)?,
            ]);
            let combined = (
                (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) / 6.0,
                (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) / 6.0,
            );
            m = advance(&m, &combined, h);
        }
        Ok(Self {
            step_size: h,
            stages,
            last: m,
        })
    }

    /// Moments at the horizon.
    pub fn last(&self) -> &GaussianMoments {
        &self.last
    }

    /// Moves each column of `particles` along the mean-field drift with the
    /// same RK4 stages as the moments.
    pub fn transport(&self, particles: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if particles.nrows() != self.last.dim() {
            return Err(Error::Dimension(format!(
                "particles have dimension {}, moments have {}",
                particles.nrows(),
                self.last.dim()
            )));
        }
        let h = self.step_size;
        let mut x = particles.clone();
        for [f1, f2, f3, f4] in &self.stages {
            let k1 = f1.apply(&x);
            let k2 = f2.apply(&(&x + &k1 * (0.5 * h)));
            let k3 = f3.apply(&(&x + &k2 * (0.5 * h)));
            let k4 = f4.apply(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        Ok(x)
    }
}

/// Integrates the second-order moment ODEs jointly with particles that
/// follow the mean-field drift `b(μ_s)(η)` for the same Gaussian law. These
/// particles are the independent comparison system for the particle
/// sampler when both start from the same draws.
pub fn integrate_coupled_particles(
    initial: &GaussianMoments,
    particles: &DMatrix<f64>,
    data: &Dataset,
    prior: &GaussianPrior,
    step_size: f64,
    horizon: f64,
) -> Result<(GaussianMoments, DMatrix<f64>)> {
    let path = MeanfieldPath::new(initial, data, prior, step_size, horizon)?;
    let x = path.transport(particles)?;
    Ok((path.last, x))
}

/// Relative residuals of the equilibrium equations
///
/// ```text
/// m* = m_prior − P_prior Φ (μ*[y] − d)
/// P* = (Φ μ*[R] Φᵀ + P_prior^{-1})^{-1}
/// ```
///
/// returned as `(‖m − m_prior + P_priorΦ(ȳ − d)‖ / (1 + ‖m‖),
/// ‖P^{-1} − Φ diag(r̄) Φᵀ − P_prior^{-1}‖_F / ‖P^{-1}‖_F)`.
pub fn equilibrium_residual(
    moments: &GaussianMoments,
    data: &Dataset,
    prior: &GaussianPrior,
) -> Result<(f64, f64)> {
    if prior.dim() != moments.dim() {
        return Err(Error::Dimension(format!(
            "moments have dimension {}, prior has {}",
            moments.dim(),
            prior.dim()
        )));
    }
    let (y_bar, r_bar) = gaussian_expectations(moments, data.features())?;
    let res_m = (&moments.mean - prior.mean()
        + prior.covariance() * (data.features() * (y_bar - data.labels())))
    .norm()
        / (1.0 + moments.mean.norm());
    let precision = Cholesky::new(moments.covariance.clone())
        .ok_or_else(|| Error::Invalid("covariance is singular".into()))?
        .inverse();
    let residual = &precision - crate::model::weighted_gram(data.features(), &r_bar) - prior.precision();
    Ok((res_m, residual.norm() / precision.norm()))
}
