//! Particle clouds and their empirical statistics.
//!
//! Particles are stored column-wise in a `D × J` matrix. The covariance uses
//! the `1/J` normalisation (not the unbiased `1/(J-1)` estimator) because the
//! sampler dynamics are written in terms of the empirical measure.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    /// `D × J`, column `j` is `θ^j − mean`.
    pub deviations: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

impl Ensemble {
    /// Builds an ensemble from a `D × J` matrix whose columns are particles.
    pub fn from_columns(particles: DMatrix<f64>) -> Result<Self> {
        if particles.nrows() == 0 || particles.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "ensemble needs D >= 1 and J >= 1, got D = {}, J = {}",
                particles.nrows(),
                particles.ncols()
            )));
        }
        if let Some((idx, _)) = particles
            .column_iter()
            .enumerate()
            .find(|(_, c)| c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!("particle {idx} has a non-finite component")));
        }
        Ok(Self { particles })
    }

    pub fn from_particles(particles: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::Invalid("ensemble has no particles".into()));
        };
        let dim = first.len();
        if let Some((idx, p)) = particles.iter().enumerate().find(|(_, p)| p.len() != dim) {
            return Err(Error::Dimension(format!(
                "particle {idx} has dimension {}, particle 0 has {dim}",
                p.len()
            )));
        }
        Self::from_columns(DMatrix::from_fn(dim, particles.len(), |i, j| particles[j][i]))
    }

    /// Reassembles particles `θ^j = mean + deviations[:, j]`.
    pub fn from_mean_and_deviations(mean: &DVector<f64>, deviations: &DMatrix<f64>) -> Result<Self> {
        if mean.len() != deviations.nrows() {
            return Err(Error::Dimension(format!(
                "mean has dimension {}, deviations have {} rows",
                mean.len(),
                deviations.nrows()
            )));
        }
        let mut particles = deviations.clone();
        for mut col in particles.column_iter_mut() {
            col += mean;
        }
        Self::from_columns(particles)
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn particle(&self, j: usize) -> DVectorView<'_, f64> {
        self.particles.column(j)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn max_particle_norm(&self) -> f64 {
        self.particles
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.particles.column_mean()
    }
}

/// Empirical mean, deviations and `1/J`-normalised covariance.
pub fn compute_stats(ensemble: &Ensemble) -> Result<EnsembleStats> {
    let j = ensemble.size();
    if j < 2 {
        return Err(Error::Invalid(format!(
            "ensemble statistics need J >= 2, got J = {j}"
        )));
    }
    let mean = ensemble.mean();
    let mut deviations = ensemble.particles.clone();
    for mut col in deviations.column_iter_mut() {
        col -= &mean;
    }
    let mut covariance = &deviations * deviations.transpose() / j as f64;
    symmetrize(&mut covariance);
    Ok(EnsembleStats {
        mean,
        deviations,
        covariance,
    })
}

/// `(1/J) Σ_j f(θ^j)`.
pub fn empirical_expectation<F>(ensemble: &Ensemble, f: F) -> Result<DVector<f64>>
where
    F: Fn(DVectorView<'_, f64>) -> DVector<f64>,
{
    let mut acc: Option<DVector<f64>> = None;
    for (j, particle) in ensemble.particles.column_iter().enumerate() {
        let value = f(particle);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "integrand is non-finite at particle {j}"
            )));
        }
        match acc.as_mut() {
            None => acc = Some(value),
            Some(a) if a.len() != value.len() => {
                return Err(Error::Dimension(format!(
                    "integrand returned length {} at particle {j}, expected {}",
                    value.len(),
                    a.len()
                )))
            }
            Some(a) => *a += value,
        }
    }
    // from_columns guarantees J >= 1
    Ok(acc.expect("non-empty ensemble") / ensemble.size() as f64)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for k in (i + 1)..n {
            let v = 0.5 * (m[(i, k)] + m[(k, i)]);
            m[(i, k)] = v;
            m[(k, i)] = v;
        }
    }
}
