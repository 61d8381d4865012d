use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "ensemble-logreg", version, about = "Ensemble samplers for Bayesian logistic regression")]
pub struct Cli {
    /// Re-run the command recorded in a manifest file.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// Output directory override for manifest replays.
    #[arg(long, value_name = "DIR", requires = "manifest")]
    pub replay_out: Option<PathBuf>,

    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a known-parameter logistic regression dataset.
    Synthesize(SynthesizeArgs),
    /// Run a sampler on a dataset.
    Sample(SampleArgs),
    /// Predictive probabilities from an ensemble or Gaussian moments.
    Predict(PredictArgs),
    /// Laplace approximation (MAP plus inverse Hessian).
    Laplace(LaplaceArgs),
    /// Integrate the mean-field moment equations.
    Meanfield(MeanfieldArgs),
    /// Run one of the experiment recipes.
    Experiment(ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synthesize(_) => "synthesize",
            Command::Sample(_) => "sample",
            Command::Predict(_) => "predict",
            Command::Laplace(_) => "laplace",
            Command::Meanfield(_) => "meanfield",
            Command::Experiment(_) => "experiment",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synthesize(a) => &a.common,
            Command::Sample(a) => &a.common,
            Command::Predict(a) => &a.common,
            Command::Laplace(a) => &a.common,
            Command::Meanfield(a) => &a.common,
            Command::Experiment(a) => &a.common,
        }
    }

    pub fn common_mut(&mut self) -> &mut Common {
        match self {
            Command::Synthesize(a) => &mut a.common,
            Command::Sample(a) => &mut a.common,
            Command::Predict(a) => &mut a.common,
            Command::Laplace(a) => &mut a.common,
            Command::Meanfield(a) => &mut a.common,
            Command::Experiment(a) => &mut a.common,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Master seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn ensemble_count(s: &str) -> Result<usize, String> {
    let v: usize = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v >= 2 {
        Ok(v)
    } else {
        Err(format!("ensemble sizes must be at least 2, got {v}"))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    /// Parameter dimension D.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Number of samples N.
    #[arg(long, short = 'n', visible_alias = "n", default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Homotopy,
    SecondOrder,
    Stochastic,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Homotopy => "homotopy",
            SamplerKind::SecondOrder => "second-order",
            SamplerKind::Stochastic => "stochastic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamingArg {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopNormArg {
    Frobenius,
    Spectral,
}

/// Prior choice shared by the commands that need one.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PriorArgs {
    /// Moments JSON file (`mean`, `covariance`) for the prior.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["prior_variance", "prior_random_spd"])]
    pub prior: Option<PathBuf>,
    /// Isotropic prior N(0, v I).
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true, value_parser = positive_f64)]
    pub prior_variance: f64,
    /// Seeded random SPD prior covariance.
    #[arg(long)]
    pub prior_random_spd: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Dataset CSV (feature columns then `label`).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "second-order")]
    pub method: SamplerKind,
    /// Ensemble size J.
    #[arg(long = "ensemble-size", short = 'J', visible_alias = "J", default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    pub ensemble_size: u64,
    /// Step size; defaults to 1/steps for homotopy and 0.1 otherwise.
    #[arg(long, allow_negative_numbers = true, value_parser = positive_f64)]
    pub dt: Option<f64>,
    /// Homotopy step count K (Δs·K must equal 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    /// Stop threshold of the second-order sampler.
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true, value_parser = positive_f64)]
    pub eps: f64,
    /// Step cap of the second-order sampler; defaults to ceil(30/dt).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: Option<u64>,
    /// Pseudo-time horizon of the stochastic sampler.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true, value_parser = positive_f64)]
    pub horizon: f64,
    #[arg(long, value_enum, default_value = "full")]
    pub taming: TamingArg,
    #[arg(long, value_enum, default_value = "frobenius")]
    pub stop_norm: StopNormArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Ensemble CSV (one particle per row).
    #[arg(long, value_name = "FILE", required_unless_present = "moments", conflicts_with = "moments")]
    pub ensemble: Option<PathBuf>,
    /// Moments JSON; predictions use the probit approximation.
    #[arg(long, value_name = "FILE")]
    pub moments: Option<PathBuf>,
    /// Test features CSV; a trailing `label` column is ignored.
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LaplaceArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1e-10, allow_negative_numbers = true, value_parser = positive_f64)]
    pub tol: f64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: u64,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Homotopy,
    SecondOrder,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MeanfieldArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "second-order")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true, value_parser = positive_f64)]
    pub dt: f64,
    /// Integration horizon; the homotopy variant requires 1.
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true, value_parser = positive_f64)]
    pub horizon: f64,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Recovery,
    Rate,
    Ood,
    Sweep,
    MulticlassDemo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Homotopy,
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKindArg {
    Identity,
    RandomSpd,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub recipe: Recipe,
    #[arg(long, value_enum, default_value = "second-order")]
    pub method: MethodArg,
    /// Ensemble size(s), comma separated.
    #[arg(long = "ensemble-size", short = 'J', visible_alias = "J", value_delimiter = ',', value_parser = ensemble_count)]
    pub ensemble_size: Option<Vec<usize>>,
    /// Repeats per configuration; default 20.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: Option<u64>,
    /// Use 100 repeats, as in the original tables.
    #[arg(long, conflicts_with = "repeats")]
    pub full: bool,
    #[arg(long, value_enum, default_value = "identity")]
    pub prior_kind: PriorKindArg,
    /// Parameter dimension of synthetic data; 20 (rate: 5).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: Option<u64>,
    /// Sample count of synthetic data; 300 (rate: 20).
    #[arg(long, short = 'n', visible_alias = "n", value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: Option<u64>,
    /// Step size (rate study and second-order runs).
    #[arg(long, allow_negative_numbers = true, value_parser = positive_f64)]
    pub dt: Option<f64>,
    /// Pseudo-time horizon of the rate study.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true, value_parser = positive_f64)]
    pub horizon: f64,
    /// Also run the exact-W2 cross-check in the rate study.
    #[arg(long)]
    pub w2: bool,
    /// Dataset CSV: 2-D inputs for `ood`, features for `sweep`.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Reference parameter CSV for `sweep` recovery errors.
    #[arg(long, value_name = "FILE")]
    pub theta_ref: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

impl ExperimentArgs {
    pub fn repeat_count(&self) -> usize {
        if self.full {
            100
        } else {
            self.repeats.unwrap_or(20) as usize
        }
    }
}
