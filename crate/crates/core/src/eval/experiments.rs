//! Composite experiments: confidence away from the data, the effect of the
//! ensemble size, and a small softmax run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::predictive::{box_grid, nearest_distances, ood_confidence_curve, predictive_confidence, OodCurve, Predictor};
use super::recovery::{sample_posterior, Method, RecoverySetup};
use super::synth::{two_clusters, ReluFeatures};
use crate::error::{Error, Result};
use crate::meanfield::laplace_fit;
use crate::model::multiclass::{block_diagonal_prior, predictive_probs, MulticlassDataset};
use crate::model::{Dataset, GaussianPrior};
use crate::par::Exec;
use crate::rng::{SeedStreams, DATASET, INIT_ENSEMBLE};
use crate::samplers::{run_second_order, sample_prior_ensemble, SecondOrderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodSetup {
    pub samples: usize,
    pub separation: f64,
    pub spread: f64,
    /// Hidden width of the random ReLU feature map.
    pub width: usize,
    /// Hinges of the feature map are spread over a cube of this half-width.
    pub hinge_radius: f64,
    pub prior_variance: f64,
    pub ensemble_size: usize,
    pub grid_side: usize,
    pub grid_scale: f64,
    pub bins: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for OodSetup {
    fn default() -> Self {
        Self {
            samples: 200,
            separation: 4.0,
            spread: 1.0,
            width: 49,
            hinge_radius: 8.0,
            prior_variance: 2.0,
            ensemble_size: 200,
            grid_side: 200,
            grid_scale: 3.0,
            bins: 10,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub ensemble: OodCurve,
    pub laplace: OodCurve,
    pub map: OodCurve,
}

/// Two-cluster data in the plane pushed through a random ReLU layer; the
/// second-order posterior, the Laplace probit predictive and the MAP plug-in
/// are compared on a grid around the data, binned by distance to the
/// nearest training input.
pub fn ood_experiment(setup: &OodSetup, seed: u64) -> Result<OodResult> {
    let streams = SeedStreams::new(seed);
    let (inputs, labels) = two_clusters(setup.samples, setup.separation, setup.spread, streams.seed(DATASET, 0))?;
    let map = ReluFeatures::new(2, setup.width, setup.hinge_radius, streams.seed("relu-features", 0))?;
    let data = Dataset::new(map.apply(&inputs)?, labels)?;
    let grid = box_grid(&inputs, setup.grid_scale, setup.grid_side)?;
    ood_from_inputs(&data, &inputs, &map.apply(&grid)?, &grid, setup, &streams)
}

/// Same comparison on caller-supplied features. `train_inputs` and
/// `test_inputs` define the distance; `data` and `test_features` feed the
/// models.
pub fn ood_from_inputs(
    data: &Dataset,
    train_inputs: &DMatrix<f64>,
    test_features: &DMatrix<f64>,
    test_inputs: &DMatrix<f64>,
    setup: &OodSetup,
    streams: &SeedStreams,
) -> Result<OodResult> {
    let prior = GaussianPrior::isotropic(data.dim(), setup.prior_variance)?;
    let initial = sample_prior_ensemble(&prior.moments(), setup.ensemble_size, streams.seed(INIT_ENSEMBLE, 0))?;
    let sampler = RecoverySetup {
        exec: setup.exec,
        ..RecoverySetup::default()
    };
    let posterior = sample_posterior(Method::SecondOrder, &initial, data, &prior, &sampler, streams.master(), setup.exec)?;
    let laplace = laplace_fit(data, &prior, 1e-10, 100)?;
    let distances = nearest_distances(train_inputs, test_inputs)?;
    let curve = |p: Predictor<'_>| -> Result<OodCurve> {
        let conf: Vec<f64> = predictive_confidence(p, test_features)?.iter().map(|p| p.confidence).collect();
        ood_confidence_curve(&distances, &conf, setup.bins)
    };
    Ok(OodResult {
        ensemble: curve(Predictor::Ensemble(&posterior))?,
        laplace: curve(Predictor::Probit(&laplace))?,
        map: curve(Predictor::Point(&laplace.mean))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub ensemble_size: usize,
    /// `J ≤ D`: the ensemble spans at most a `J − 1` dimensional subspace.
    pub low_rank: bool,
    /// Per-repeat `‖m − θ_ref‖₂`, empty without a reference parameter.
    pub errors: Vec<f64>,
    /// Per-repeat mean confidence over the test set.
    pub mean_confidence: Vec<f64>,
    /// Per-point confidence from repeat 0.
    pub confidences: Vec<f64>,
}

/// Runs `method` at every ensemble size on one fixed dataset. Repeat `r`
/// at size `J` draws its initial ensemble from a stream keyed by `(J, r)`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_size_sweep(
    ensemble_sizes: &[usize],
    method: Method,
    data: &Dataset,
    prior: &GaussianPrior,
    theta_ref: Option<&DVector<f64>>,
    test_features: &DMatrix<f64>,
    repeats: usize,
    seed: u64,
    setup: &RecoverySetup,
) -> Result<Vec<SweepEntry>> {
    if ensemble_sizes.is_empty() || repeats == 0 {
        return Err(Error::Invalid("need at least one ensemble size and one repeat".into()));
    }
    if let Some(&j) = ensemble_sizes.iter().find(|&&j| j < 2) {
        return Err(Error::Invalid(format!("ensemble size must be at least 2, got {j}")));
    }
    let streams = SeedStreams::new(seed);
    let jobs = ensemble_sizes.len() * repeats;
    let runs = setup.exec.map(jobs, |k| -> Result<(Option<f64>, Vec<f64>)> {
        let j = ensemble_sizes[k / repeats];
        let r = (k % repeats) as u64;
        let init_seed = streams.child("ensemble-size", j as u64).seed(INIT_ENSEMBLE, r);
        let initial = sample_prior_ensemble(&prior.moments(), j, init_seed)?;
        let posterior = sample_posterior(method, &initial, data, prior, setup, init_seed, Exec::Sequential)?;
        let error = theta_ref.map(|t| (posterior.mean() - t).norm());
        let conf = predictive_confidence(Predictor::Ensemble(&posterior), test_features)?
            .iter()
            .map(|p| p.confidence)
            .collect();
        Ok((error, conf))
    });
    let runs: Vec<_> = runs.into_iter().collect::<Result<_>>()?;
    Ok(ensemble_sizes
        .iter()
        .zip(runs.chunks(repeats))
        .map(|(&j, chunk)| SweepEntry {
            ensemble_size: j,
            low_rank: j <= data.dim(),
            errors: chunk.iter().filter_map(|(e, _)| *e).collect(),
            mean_confidence: chunk
                .iter()
                .map(|(_, c)| c.iter().sum::<f64>() / c.len() as f64)
                .collect(),
            confidences: chunk[0].1.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassDemo {
    pub classes: usize,
    pub ensemble_size: usize,
    pub train_accuracy: f64,
    pub train_confidence: f64,
    /// Mean confidence at points placed far from every cluster.
    pub far_confidence: f64,
    pub steps_taken: usize,
}

/// `classes` Gaussian clusters on a circle of radius 3, features `[x; 1]`,
/// block-diagonal standard prior, second-order sampler on the stacked
/// parameter.
pub fn multiclass_demo(classes: usize, per_class: usize, ensemble_size: usize, seed: u64) -> Result<MulticlassDemo> {
    if classes < 2 || per_class == 0 {
        return Err(Error::Invalid("need at least 2 classes and 1 point per class".into()));
    }
    let streams = SeedStreams::new(seed);
    let mut rng = streams.rng(DATASET, 0);
    let noise = crate::samplers::standard_normal_matrix(2, classes * per_class, &mut rng);
    let n = classes * per_class;
    let centre = |k: usize| {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        (3.0 * angle.cos(), 3.0 * angle.sin())
    };
    let mut features = DMatrix::from_element(3, n, 1.0);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i / per_class;
        let (cx, cy) = centre(k);
        features[(0, i)] = cx + 0.7 * noise[(0, i)];
        features[(1, i)] = cy + 0.7 * noise[(1, i)];
        labels.push(k);
    }
    let data = MulticlassDataset::new(features, labels, classes)?;
    let prior = block_diagonal_prior(&GaussianPrior::standard(3), classes)?;
    let initial = sample_prior_ensemble(&prior.moments(), ensemble_size, streams.seed(INIT_ENSEMBLE, 0))?;
    let report = run_second_order(&initial, &data, &prior, &SecondOrderConfig::default())?;
    let particles = report.final_ensemble.particles();

    let train = predictive_probs(particles, classes, data.features())?;
    let argmax = |p: &Vec<f64>| {
        p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
    };
    let correct = train
        .iter()
        .zip(data.labels())
        .filter(|(p, &l)| argmax(p).0 == l)
        .count();
    let train_confidence = train.iter().map(|p| argmax(p).1).sum::<f64>() / n as f64;

    // Points between the clusters at twice the radius: off the data, between classes.
    let far = DMatrix::from_fn(3, classes, |i, k| {
        let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / classes as f64;
        match i {
            0 => 15.0 * angle.cos(),
            1 => 15.0 * angle.sin(),
            _ => 1.0,
        }
    });
    let far_probs = predictive_probs(particles, classes, &far)?;
    let far_confidence = far_probs.iter().map(|p| argmax(p).1).sum::<f64>() / classes as f64;
    Ok(MulticlassDemo {
        classes,
        ensemble_size,
        train_accuracy: correct as f64 / n as f64,
        train_confidence,
        far_confidence,
        steps_taken: report.steps_taken,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_flags_low_rank_and_is_deterministic() {
        let (data, theta) = super::super::synth::synthesize_logistic_dataset(3, 30, 2).unwrap();
        let prior = GaussianPrior::standard(3);
        let test = data.features().columns(0, 5).into_owned();
        let setup = RecoverySetup {
            dim: 3,
            samples: 30,
            ..RecoverySetup::default()
        };
        let run = || ensemble_size_sweep(&[2, 10], Method::SecondOrder, &data, &prior, Some(&theta), &test, 2, 4, &setup).unwrap();
        let a = run();
        assert_eq!(a, run());
        assert!(a[0].low_rank && !a[1].low_rank);
        assert_eq!(a[1].errors.len(), 2);
        assert!(a
            .iter()
            .flat_map(|e| e.confidences.iter())
            .all(|&c| (0.5..=1.0).contains(&c)));
    }

    #[test]
    fn multiclass_demo_fits_clusters() {
        let demo = multiclass_demo(3, 30, 40, 1).unwrap();
        assert!(demo.train_accuracy > 0.9, "{demo:?}");
        assert!(demo.train_confidence >= 1.0 / 3.0 && demo.train_confidence <= 1.0);
        assert!(demo.far_confidence >= 1.0 / 3.0);
    }
}
