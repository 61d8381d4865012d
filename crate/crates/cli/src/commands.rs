use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ensemble_logreg::eval::{
    self, ensemble_size_sweep, meanfield_rate_study, multiclass_demo, ood_experiment, ood_from_inputs,
    predictive_confidence, random_spd_prior, recovery_experiment, synthesize_logistic_dataset, w2_rate_study,
    OodCurve, OodResult, OodSetup, Predictor, PriorKind, RateFit, RateSetup, RecoverySetup,
};
use ensemble_logreg::io;
use ensemble_logreg::meanfield::{equilibrium_residual, integrate_moments, laplace_fit, MomentVariant};
use ensemble_logreg::model::{Dataset, GaussianPrior, Taming};
use ensemble_logreg::par::Exec;
use ensemble_logreg::rng::{SeedStreams, DATASET, INIT_ENSEMBLE, NOISE, PRIOR_SPD};
use ensemble_logreg::samplers::{
    run_homotopy, run_second_order, run_stochastic_second_order, sample_prior_ensemble, HomotopyConfig, RunReport,
    SecondOrderConfig, StochasticConfig, StopNorm,
};
use ensemble_logreg::{Error, Result};
use serde::Serialize;

use crate::args::*;

/// What a command produced: files relative to the output directory, the
/// input files it read, and the text summary for standard output.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub summary: String,
}

struct Ctx<'a> {
    out: &'a Path,
    outcome: Outcome,
}

impl Ctx<'_> {
    fn path(&mut self, name: String) -> PathBuf {
        let p = self.out.join(&name);
        self.outcome.outputs.push(name);
        p
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        self.outcome.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }
}

pub fn run(command: &Command, exec: Exec) -> Result<Outcome> {
    let out = &command.common().out;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let mut ctx = Ctx {
        out,
        outcome: Outcome::default(),
    };
    match command {
        Command::Synthesize(a) => synthesize(a, &mut ctx)?,
        Command::Sample(a) => sample(a, exec, &mut ctx)?,
        Command::Predict(a) => predict(a, &mut ctx)?,
        Command::Laplace(a) => laplace(a, &mut ctx)?,
        Command::Meanfield(a) => meanfield(a, &mut ctx)?,
        Command::Experiment(a) => experiment(a, exec, &mut ctx)?,
    }
    Ok(ctx.outcome)
}

fn synthesize(a: &SynthesizeArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let streams = SeedStreams::new(a.common.seed);
    let (data, theta) = synthesize_logistic_dataset(a.dim as usize, a.samples as usize, streams.seed(DATASET, 0))?;
    io::write_dataset_csv(&ctx.path("dataset.csv".into()), &data)?;
    io::write_vector_csv(&ctx.path("theta_ref.csv".into()), &theta)?;
    ctx.outcome.summary = format!(
        "dataset: D = {}, N = {}, positive labels = {}\n",
        data.dim(),
        data.len(),
        data.labels().sum()
    );
    Ok(())
}

fn load_prior(p: &PriorArgs, dim: usize, seed: u64, ctx: &mut Ctx<'_>) -> Result<GaussianPrior> {
    let prior = if let Some(path) = &p.prior {
        let m = io::read_moments_json(&ctx.input(path))?;
        GaussianPrior::new(m.mean, m.covariance)?
    } else if p.prior_random_spd {
        random_spd_prior(dim, SeedStreams::new(seed).seed(PRIOR_SPD, 0))?
    } else {
        GaussianPrior::isotropic(dim, p.prior_variance)?
    };
    if prior.dim() != dim {
        return Err(Error::Dimension(format!(
            "prior has dimension {}, features have dimension {dim}",
            prior.dim()
        )));
    }
    Ok(prior)
}

fn taming(t: TamingArg) -> Taming {
    match t {
        TamingArg::Full => Taming::Full,
        TamingArg::Diagonal => Taming::Diagonal,
    }
}

#[derive(Serialize)]
struct SampleReport<'a> {
    method: &'a str,
    ensemble_size: usize,
    seed: u64,
    step_size: f64,
    steps_taken: usize,
    terminated_by: ensemble_logreg::samplers::Termination,
    ensemble: &'a str,
    final_mean: Vec<f64>,
    diagnostics: &'a [ensemble_logreg::samplers::StepDiagnostics],
    error: Option<String>,
}

fn sample(a: &SampleArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    let data = io::read_dataset_csv(&ctx.input(&a.data))?;
    let seed = a.common.seed;
    let streams = SeedStreams::new(seed);
    let prior = load_prior(&a.prior, data.dim(), seed, ctx)?;
    let j = a.ensemble_size as usize;
    let initial = sample_prior_ensemble(&prior.moments(), j, streams.seed(INIT_ENSEMBLE, 0))?;
    let result = match a.method {
        SamplerKind::Homotopy => {
            let steps = match (a.steps, a.dt) {
                (Some(k), _) => k as usize,
                (None, Some(dt)) => (1.0 / dt).round().max(1.0) as usize,
                (None, None) => 1000,
            };
            let config = HomotopyConfig {
                step_size: a.dt.unwrap_or(1.0 / steps as f64),
                steps,
                taming: taming(a.taming),
                seed,
                exec,
            };
            run_homotopy(&initial, &data, &config)
        }
        SamplerKind::SecondOrder => {
            let dt = a.dt.unwrap_or(SecondOrderConfig::DEFAULT_STEP_SIZE);
            let mut config = SecondOrderConfig::with_step_size(dt);
            config.stop_threshold = a.eps;
            if let Some(cap) = a.max_steps {
                config.max_steps = cap as usize;
            }
            config.taming = taming(a.taming);
            config.stop_norm = match a.stop_norm {
                StopNormArg::Frobenius => StopNorm::Frobenius,
                StopNormArg::Spectral => StopNorm::Spectral,
            };
            config.seed = seed;
            config.exec = exec;
            run_second_order(&initial, &data, &prior, &config)
        }
        SamplerKind::Stochastic => {
            let dt = a.dt.unwrap_or(SecondOrderConfig::DEFAULT_STEP_SIZE);
            let steps = (a.horizon / dt).ceil().max(1.0) as usize;
            let mut config = StochasticConfig::new(dt, steps, streams.seed(NOISE, 0));
            config.taming = taming(a.taming);
            config.exec = exec;
            run_stochastic_second_order(&initial, &data, &prior, &config)
        }
    };
    let stem = format!("sample_{}_J{j}_seed{seed}", a.method.name());
    let (report, error) = match result {
        Ok(r) => (r, None),
        Err(Error::BlowUp {
            step,
            step_size,
            reason,
            partial: Some(partial),
        }) => {
            let err = Error::BlowUp {
                step,
                step_size,
                reason,
                partial: None,
            };
            (*partial, Some(err))
        }
        Err(e) => return Err(e),
    };
    write_sample(ctx, &stem, a.method.name(), &report, error.as_ref())?;
    match error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn write_sample(ctx: &mut Ctx<'_>, stem: &str, method: &str, report: &RunReport, error: Option<&Error>) -> Result<()> {
    let ens_name = format!("{stem}.csv");
    io::write_ensemble_csv(&ctx.path(ens_name.clone()), &report.final_ensemble)?;
    let mean = report.final_ensemble.mean();
    let json = SampleReport {
        method,
        ensemble_size: report.final_ensemble.size(),
        seed: report.seed,
        step_size: report.step_size,
        steps_taken: report.steps_taken,
        terminated_by: report.terminated_by,
        ensemble: &ens_name,
        final_mean: mean.as_slice().to_vec(),
        diagnostics: &report.diagnostics,
        error: error.map(|e| e.to_string()),
    };
    io::write_json(&ctx.path(format!("{stem}.json")), &json)?;
    ctx.outcome.summary = format!(
        "{method}: J = {}, steps = {}, terminated by {:?}, |mean| = {:.6}\n",
        report.final_ensemble.size(),
        report.steps_taken,
        report.terminated_by,
        mean.norm()
    );
    Ok(())
}

fn predict(a: &PredictArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let features = io::read_features_csv(&ctx.input(&a.features))?;
    let (preds, mode) = if let Some(path) = &a.ensemble {
        let e = io::read_ensemble_csv(&ctx.input(path))?;
        (predictive_confidence(Predictor::Ensemble(&e), &features)?, "ensemble")
    } else {
        let path = a.moments.as_ref().expect("clap requires --ensemble or --moments");
        let m = io::read_moments_json(&ctx.input(path))?;
        (predictive_confidence(Predictor::Probit(&m), &features)?, "probit")
    };
    io::write_predictions_csv(&ctx.path(format!("predict_{mode}_seed{}.csv", a.common.seed)), &preds)?;
    let mean_conf = preds.iter().map(|p| p.confidence).sum::<f64>() / preds.len() as f64;
    ctx.outcome.summary = format!("{mode}: {} points, mean confidence {mean_conf:.6}\n", preds.len());
    Ok(())
}

fn laplace(a: &LaplaceArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let data = io::read_dataset_csv(&ctx.input(&a.data))?;
    let prior = load_prior(&a.prior, data.dim(), a.common.seed, ctx)?;
    let fit = laplace_fit(&data, &prior, a.tol, a.max_iter as usize)?;
    io::write_moments_json(&ctx.path(format!("laplace_seed{}.json", a.common.seed)), &fit)?;
    ctx.outcome.summary = format!(
        "laplace: |MAP| = {:.6}, trace(P) = {:.6}\n",
        fit.mean.norm(),
        fit.covariance.trace()
    );
    Ok(())
}

fn meanfield(a: &MeanfieldArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let data = io::read_dataset_csv(&ctx.input(&a.data))?;
    let prior = load_prior(&a.prior, data.dim(), a.common.seed, ctx)?;
    let (variant, name) = match a.variant {
        VariantArg::Homotopy => (MomentVariant::Homotopy, "homotopy"),
        VariantArg::SecondOrder => (MomentVariant::SecondOrder, "second-order"),
    };
    let traj = integrate_moments(&prior.moments(), &data, &prior, a.dt, a.horizon, variant)?;
    let residuals = traj
        .states
        .iter()
        .map(|s| equilibrium_residual(s, &data, &prior))
        .collect::<Result<Vec<_>>>()?;
    let stem = format!("meanfield_{name}_seed{}", a.common.seed);
    io::write_trajectory_csv(&ctx.path(format!("{stem}.csv")), &traj, &residuals)?;
    io::write_moments_json(&ctx.path(format!("{stem}.json")), traj.last())?;
    let (rm, rp) = residuals.last().copied().unwrap_or((f64::NAN, f64::NAN));
    ctx.outcome.summary = format!(
        "meanfield {name}: s = {}, |m| = {:.6}, res_m = {rm:.3e}, res_P = {rp:.3e}\n",
        traj.times.last().copied().unwrap_or(0.0),
        traj.last().mean.norm()
    );
    Ok(())
}

fn method(m: MethodArg) -> eval::Method {
    match m {
        MethodArg::Homotopy => eval::Method::Homotopy,
        MethodArg::SecondOrder => eval::Method::SecondOrder,
    }
}

fn size_tag(sizes: &[usize]) -> String {
    sizes.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn experiment(a: &ExperimentArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    match a.recipe {
        Recipe::Recovery => recovery(a, exec, ctx),
        Recipe::Rate => rate(a, exec, ctx),
        Recipe::Ood => ood(a, exec, ctx),
        Recipe::Sweep => sweep(a, exec, ctx),
        Recipe::MulticlassDemo => multiclass(a, ctx),
    }
}

fn recovery(a: &ExperimentArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    let sizes = a.ensemble_size.clone().unwrap_or_else(|| vec![100]);
    let seed = a.common.seed;
    let m = method(a.method);
    let mut setup = RecoverySetup {
        dim: a.dim.unwrap_or(20) as usize,
        samples: a.samples.unwrap_or(300) as usize,
        exec,
        ..RecoverySetup::default()
    };
    if let Some(dt) = a.dt {
        match m {
            eval::Method::Homotopy => setup.homotopy_steps = (1.0 / dt).round().max(1.0) as usize,
            eval::Method::SecondOrder => setup.second_order_step = dt,
        }
    }
    let prior = match a.prior_kind {
        PriorKindArg::Identity => PriorKind::Identity,
        PriorKindArg::RandomSpd => PriorKind::RandomSpd,
    };
    let mut table = String::new();
    let _ = writeln!(table, "{:<14}{:>6}{:>16}{:>12}{:>10}", "method", "J", "mean l2-error", "std", "failed");
    for &j in &sizes {
        let r = recovery_experiment(m, j, a.repeat_count(), prior, seed, &setup)?;
        let stem = format!("recovery_{}_J{j}_seed{seed}", m.name());
        io::write_json(&ctx.path(format!("{stem}.json")), &r)?;
        let rows = r.errors.iter().enumerate().map(|(i, e)| {
            vec![i.to_string(), e.map(io::fmt_f64).unwrap_or_else(|| "failed".into())]
        });
        io::write_table(&ctx.path(format!("{stem}.csv")), &["repeat", "l2_error"], rows)?;
        let _ = writeln!(
            table,
            "{:<14}{:>6}{:>16.4}{:>12.4}{:>10}",
            m.name(),
            j,
            r.mean_error,
            r.std_dev,
            r.failures()
        );
    }
    ctx.outcome.summary = table;
    Ok(())
}

fn rate(a: &ExperimentArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    let seed = a.common.seed;
    let mut setup = RateSetup {
        dim: a.dim.unwrap_or(5) as usize,
        samples: a.samples.unwrap_or(20) as usize,
        exec,
        ..RateSetup::default()
    };
    if let Some(dt) = a.dt {
        setup.step_size = dt;
    }
    let sizes = a.ensemble_size.clone().unwrap_or_else(|| vec![50, 100, 200, 400, 800]);
    let repeats = a.repeat_count();
    let fit = meanfield_rate_study(&sizes, a.horizon, repeats, seed, &setup)?;
    let mut summary = String::new();
    write_fit(ctx, &mut summary, "moment", &fit, seed)?;
    if a.w2 {
        let w2_sizes = if a.ensemble_size.is_some() {
            sizes.iter().copied().filter(|&j| j <= 200).collect()
        } else {
            vec![50, 100, 150, 200]
        };
        let fit = w2_rate_study(&w2_sizes, a.horizon, repeats, seed, &setup)?;
        write_fit(ctx, &mut summary, "w2", &fit, seed)?;
    }
    ctx.outcome.summary = summary;
    Ok(())
}

fn write_fit(ctx: &mut Ctx<'_>, summary: &mut String, metric: &str, fit: &RateFit, seed: u64) -> Result<()> {
    let stem = format!("rate_{metric}_J{}_seed{seed}", size_tag(&fit.ensemble_sizes));
    io::write_json(&ctx.path(format!("{stem}.json")), fit)?;
    let rows = fit
        .ensemble_sizes
        .iter()
        .zip(&fit.errors)
        .map(|(j, e)| vec![j.to_string(), io::fmt_f64(*e)]);
    io::write_table(&ctx.path(format!("{stem}.csv")), &["J", "error"], rows)?;
    let _ = writeln!(summary, "{:<8}{:>8}{:>16}", metric, "J", "error");
    for (j, e) in fit.ensemble_sizes.iter().zip(&fit.errors) {
        let _ = writeln!(summary, "{:<8}{:>8}{:>16.6}", "", j, e);
    }
    let _ = writeln!(
        summary,
        "{metric} slope {:.4} +/- {:.4} (intercept {:.4})",
        fit.slope, fit.slope_half_width, fit.intercept
    );
    Ok(())
}

fn ood(a: &ExperimentArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    let seed = a.common.seed;
    let mut setup = OodSetup {
        exec,
        ..OodSetup::default()
    };
    if let Some(sizes) = &a.ensemble_size {
        setup.ensemble_size = sizes[0];
    }
    let result: OodResult = match &a.dataset {
        None => ood_experiment(&setup, seed)?,
        Some(path) => {
            let raw = io::read_dataset_csv(&ctx.input(path))?;
            if raw.dim() != 2 {
                return Err(Error::Dimension(format!(
                    "ood expects 2-D inputs, {} has {} feature columns",
                    path.display(),
                    raw.dim()
                )));
            }
            let streams = SeedStreams::new(seed);
            let map = eval::ReluFeatures::new(2, setup.width, setup.hinge_radius, streams.seed("relu-features", 0))?;
            let data = Dataset::new(map.apply(raw.features())?, raw.labels().clone())?;
            let grid = eval::box_grid(raw.features(), setup.grid_scale, setup.grid_side)?;
            ood_from_inputs(&data, raw.features(), &map.apply(&grid)?, &grid, &setup, &streams)?
        }
    };
    let stem = format!("ood_second-order_J{}_seed{seed}", setup.ensemble_size);
    io::write_json(&ctx.path(format!("{stem}.json")), &result)?;
    let curves: [(&str, &OodCurve); 3] = [("ensemble", &result.ensemble), ("laplace", &result.laplace), ("map", &result.map)];
    let rows = (0..result.ensemble.centers.len()).map(|b| {
        let mut row = vec![io::fmt_f64(result.ensemble.centers[b]), result.ensemble.counts[b].to_string()];
        for (_, c) in &curves {
            row.push(io::fmt_f64(c.mean_confidence[b]));
            row.push(io::fmt_f64(c.std_confidence[b]));
        }
        row
    });
    io::write_table(
        &ctx.path(format!("{stem}.csv")),
        &["delta", "count", "ensemble_mean", "ensemble_std", "laplace_mean", "laplace_std", "map_mean", "map_std"],
        rows,
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "{:>10}{:>8}{:>12}{:>12}{:>12}", "delta", "count", "ensemble", "laplace", "map");
    for b in 0..result.ensemble.centers.len() {
        let _ = writeln!(
            s,
            "{:>10.3}{:>8}{:>12.4}{:>12.4}{:>12.4}",
            result.ensemble.centers[b],
            result.ensemble.counts[b],
            result.ensemble.mean_confidence[b],
            result.laplace.mean_confidence[b],
            result.map.mean_confidence[b]
        );
    }
    ctx.outcome.summary = s;
    Ok(())
}

fn sweep(a: &ExperimentArgs, exec: Exec, ctx: &mut Ctx<'_>) -> Result<()> {
    let seed = a.common.seed;
    let sizes = a.ensemble_size.clone().unwrap_or_else(|| vec![30, 50, 100, 200, 300]);
    let streams = SeedStreams::new(seed);
    let (data, theta) = match &a.dataset {
        Some(path) => {
            let data = io::read_dataset_csv(&ctx.input(path))?;
            let theta = match &a.theta_ref {
                Some(t) => Some(io::read_vector_csv(&ctx.input(t))?),
                None => None,
            };
            (data, theta)
        }
        None => {
            let (d, t) = synthesize_logistic_dataset(
                a.dim.unwrap_or(20) as usize,
                a.samples.unwrap_or(300) as usize,
                streams.seed(DATASET, 0),
            )?;
            (d, Some(t))
        }
    };
    if let Some(t) = &theta {
        if t.len() != data.dim() {
            return Err(Error::Dimension(format!(
                "reference parameter has dimension {}, features have dimension {}",
                t.len(),
                data.dim()
            )));
        }
    }
    let prior = GaussianPrior::standard(data.dim());
    let setup = RecoverySetup {
        dim: data.dim(),
        samples: data.len(),
        exec,
        ..RecoverySetup::default()
    };
    let m = method(a.method);
    let entries = ensemble_size_sweep(
        &sizes,
        m,
        &data,
        &prior,
        theta.as_ref(),
        data.features(),
        a.repeat_count(),
        seed,
        &setup,
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}{:>6}{:>16}{:>16}{:>10}", "method", "J", "mean l2-error", "mean conf.", "low-rank");
    for e in &entries {
        let stem = format!("sweep_{}_J{}_seed{seed}", m.name(), e.ensemble_size);
        let rows = e
            .confidences
            .iter()
            .enumerate()
            .map(|(i, c)| vec![i.to_string(), io::fmt_f64(*c)]);
        io::write_table(&ctx.path(format!("{stem}.csv")), &["point", "confidence"], rows)?;
        let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let _ = writeln!(
            s,
            "{:<14}{:>6}{:>16.4}{:>16.4}{:>10}",
            m.name(),
            e.ensemble_size,
            avg(&e.errors),
            avg(&e.mean_confidence),
            e.low_rank
        );
    }
    io::write_json(
        &ctx.path(format!("sweep_{}_J{}_seed{seed}.json", m.name(), size_tag(&sizes))),
        &entries,
    )?;
    ctx.outcome.summary = s;
    Ok(())
}

fn multiclass(a: &ExperimentArgs, ctx: &mut Ctx<'_>) -> Result<()> {
    let seed = a.common.seed;
    let j = a.ensemble_size.as_ref().map_or(100, |s| s[0]);
    let demo = multiclass_demo(3, (a.samples.unwrap_or(150) as usize / 3).max(1), j, seed)?;
    io::write_json(&ctx.path(format!("multiclass-demo_second-order_J{j}_seed{seed}.json")), &demo)?;
    ctx.outcome.summary = format!(
        "classes {}, J = {j}: train accuracy {:.4}, train confidence {:.4}, far confidence {:.4}\n",
        demo.classes, demo.train_accuracy, demo.train_confidence, demo.far_confidence
    );
    Ok(())
}
