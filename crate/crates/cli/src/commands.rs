use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use symplectic_ml::analysis::{
    boundedness_check, lyapunov_spectrum, mean, poincare_section, relative_energy_error, secular_growth,
    write_energy_error_csv, write_lyapunov_csv, LyapunovRow,
};
use symplectic_ml::data::{generate_dataset, ground_truth, load_dataset, sample_initial_condition, save_dataset, GenerationConfig};
use symplectic_ml::dynamics::{hh_energy, integrate, ESCAPE_RADIUS};
use symplectic_ml::lstm::{infer_param_ensemble, observe_partial, predict_from_partial, EncoderModel};
use symplectic_ml::models::{Checkpoint, Model, ModelKind, SeparableModel};
use symplectic_ml::training::{make_checkpoint, train, TrainConfig};
use symplectic_ml::{PhaseState, PotentialParams, Trajectory};

use crate::config::{ensure_positive, from_table, load_table};
use crate::output::{csv_rows, OutDir, RunMeta};
use crate::{
    Cli, Command, EvalArgs, GenerateArgs, InferArgs, LyapunovArgs, PartialArgs, PoincareArgs, PredictArgs, StepArgs,
    TrainArgs,
};

/// Resampling budget when a drawn initial condition leaves the well.
const MAX_IC_ATTEMPTS: usize = 100;

pub fn run(cli: &Cli) -> Result<()> {
    let out = OutDir::create(&cli.out)?;
    let seed = cli.seed;
    match &cli.command {
        Command::Generate(a) => generate(a, seed, &out),
        Command::Train(a) => train_cmd(a, seed, &out),
        Command::Predict(a) => predict(a, seed.unwrap_or(0), &out),
        Command::PredictPartial(a) => predict_partial(a, seed.unwrap_or(0), &out),
        Command::EvalEnergy(a) => eval_energy(a, seed.unwrap_or(0), &out),
        Command::Lyapunov(a) => lyapunov(a, seed.unwrap_or(0), &out),
        Command::Poincare(a) => poincare(a, seed.unwrap_or(0), &out),
        Command::InferParams(a) => infer_params(a, seed.unwrap_or(0), &out),
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Arguments plus content hashes of the input files they name.
fn config_with_inputs<A: Serialize>(args: &A, inputs: &[(&str, &Path)]) -> Result<serde_json::Value> {
    let mut v = serde_json::json!({ "args": args });
    for (name, path) in inputs {
        v[format!("{name}_sha256")] = serde_json::Value::String(file_sha256(path)?);
    }
    Ok(v)
}

fn load_model(path: &Path) -> Result<Model> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.model()?)
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    match load_model(path)? {
        Model::Encoder(e) => Ok(e),
        other => bail!("{} holds a {} model, not an encoder", path.display(), other.kind_name()),
    }
}

fn load_separable(path: &Path) -> Result<SeparableModel> {
    match load_model(path)? {
        Model::Separable(m) => Ok(m),
        other => bail!("{} holds a {} model, not a separable one", path.display(), other.kind_name()),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn coarse_factor(step: &StepArgs) -> Result<usize> {
    ensure_positive("dt", step.dt)?;
    ensure_positive("fine-dt", step.fine_dt)?;
    let factor = (step.dt / step.fine_dt).round();
    if factor < 1.0 || (factor * step.fine_dt - step.dt).abs() > 1e-9 * step.dt {
        bail!("dt {} must be a whole multiple of fine-dt {}", step.dt, step.fine_dt);
    }
    Ok(factor as usize)
}

/// Draw initial conditions on the shell until `accept` succeeds.
fn sample_accepted<T>(
    energy: f64,
    params: &PotentialParams,
    rng: &mut ChaCha8Rng,
    mut accept: impl FnMut(&PhaseState) -> symplectic_ml::Result<T>,
) -> Result<T> {
    let mut last = None;
    for _ in 0..MAX_IC_ATTEMPTS {
        let s0 = sample_initial_condition(energy, params, rng)?;
        match accept(&s0) {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    bail!(
        "no usable initial condition after {MAX_IC_ATTEMPTS} draws: {}",
        last.map_or_else(String::new, |e| e.to_string())
    )
}

fn write_trajectory(out: &OutDir, name: &str, meta: &RunMeta, traj: &Trajectory, params: &PotentialParams) -> Result<()> {
    let rows: Vec<(f64, f64, f64, f64, f64, f64)> = traj
        .states()
        .iter()
        .enumerate()
        .map(|(k, s)| (k as f64 * traj.dt(), s.q[0], s.q[1], s.p[0], s.p[1], hh_energy(s, params)))
        .collect();
    out.write_csv(name, meta, |w| csv_rows(w, &["t", "q_x", "q_y", "p_x", "p_y", "energy"], &rows))?;
    Ok(())
}

fn generate(a: &GenerateArgs, seed: Option<u64>, out: &OutDir) -> Result<()> {
    let mut table = load_table(Some(&a.config), &a.overrides)?;
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    let config: GenerationConfig = from_table(table)?;
    config.validate()?;
    let meta = RunMeta::new("generate", config.seed, &config)?;
    let ds = generate_dataset(&config)?;
    save_dataset(&ds, out.path("dataset.smld")?)?;
    let rows: Vec<_> = ds
        .manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.params.alpha, r.params.beta, r.energy, r.len, r.retries))
        .collect();
    out.write_csv("trajectories.csv", &meta, |w| {
        csv_rows(w, &["trajectory", "alpha", "beta", "energy", "len", "retries"], &rows)
    })?;
    out.write_metadata(&meta)?;
    println!("{} trajectories, {} states", ds.manifest.records.len(), ds.len());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>, out: &OutDir) -> Result<()> {
    let mut table = load_table(a.config.as_deref(), &a.overrides)?;
    if let Some(kind) = a.kind {
        table.insert("model_kind".into(), toml::Value::String(kind.as_str().into()));
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    if !table.contains_key("model_kind") {
        bail!("the model kind must be given with --kind or in the config");
    }
    let kind: ModelKind = table["model_kind"]
        .as_str()
        .context("model_kind must be a string")?
        .parse()?;
    let mut defaults = toml::Table::try_from(TrainConfig::new(kind))?;
    defaults.extend(table);
    let config: TrainConfig = from_table(defaults)?;
    config.validate()?;
    let ds = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let meta = RunMeta::new(
        "train",
        config.seed,
        &serde_json::json!({ "train": config, "data_sha256": file_sha256(&a.data)? }),
    )?;
    let (model, mut report) = train(&config, &ds)?;
    let ck_path = out.path("model.json")?;
    make_checkpoint(&model, &config, &report)?.save(&ck_path)?;
    report.checkpoint = Some(ck_path.display().to_string());
    out.write_csv("loss.csv", &meta, |w| Ok(report.write_csv(w)?))?;
    out.write_metadata(&meta)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "{} epochs in {:.1}s, train loss {:.4e}, validation loss {:.4e}",
            report.epochs.len(),
            report.wall_time_secs,
            last.train_loss,
            last.val_loss
        );
    }
    Ok(())
}

fn predict(a: &PredictArgs, seed: u64, out: &OutDir) -> Result<()> {
    let factor = coarse_factor(&a.step)?;
    let model = load_model(&a.checkpoint)?;
    let params = a.system.params();
    let meta = RunMeta::new("predict", seed, &config_with_inputs(a, &[("checkpoint", &a.checkpoint)])?)?;
    let truth = match a.state {
        Some(s) => ground_truth(&PhaseState::from_array(s.0), &params, a.step.fine_dt, factor, a.steps)?,
        None => sample_accepted(a.system.energy, &params, &mut rng_for(seed, 0), |s0| {
            ground_truth(s0, &params, a.step.fine_dt, factor, a.steps)
        })?,
    };
    let pred = model.rollout(truth.first(), &params, a.step.dt, a.steps)?;
    let err = relative_energy_error(&pred, &truth, &params)?;
    write_trajectory(out, "trajectory.csv", &meta, &pred, &params)?;
    write_trajectory(out, "truth.csv", &meta, &truth, &params)?;
    out.write_csv("energy_error.csv", &meta, |w| Ok(write_energy_error_csv(w, a.step.dt, &err)?))?;
    out.write_metadata(&meta)?;
    println!("mean relative energy error {:.4}%", mean(&err));
    Ok(())
}

#[derive(Serialize)]
struct RolloutSummary {
    rollout: usize,
    mean_percent: f64,
    max_percent: f64,
    secular_growth: bool,
    diverged_step: Option<usize>,
}

fn eval_energy(a: &EvalArgs, seed: u64, out: &OutDir) -> Result<()> {
    let factor = coarse_factor(&a.step)?;
    let model = load_model(&a.checkpoint)?;
    let params = a.system.params();
    let meta = RunMeta::new("eval-energy", seed, &config_with_inputs(a, &[("checkpoint", &a.checkpoint)])?)?;
    let results: Vec<(RolloutSummary, Vec<f64>)> = (0..a.rollouts)
        .into_par_iter()
        .map(|k| {
            let truth = sample_accepted(a.system.energy, &params, &mut rng_for(seed, k as u64), |s0| {
                ground_truth(s0, &params, a.step.fine_dt, factor, a.steps)
            })?;
            let summary = match model.rollout(truth.first(), &params, a.step.dt, a.steps) {
                Ok(pred) => {
                    let err = relative_energy_error(&pred, &truth, &params)?;
                    let s = RolloutSummary {
                        rollout: k,
                        mean_percent: mean(&err),
                        max_percent: err.iter().cloned().fold(0.0, f64::max),
                        secular_growth: secular_growth(&err, a.growth_factor),
                        diverged_step: None,
                    };
                    (s, err)
                }
                Err(symplectic_ml::Error::IntegrationDiverged { step, .. }) => (
                    RolloutSummary {
                        rollout: k,
                        mean_percent: f64::NAN,
                        max_percent: f64::NAN,
                        secular_growth: true,
                        diverged_step: Some(step),
                    },
                    Vec::new(),
                ),
                Err(e) => return Err(e.into()),
            };
            Ok(summary)
        })
        .collect::<Result<_>>()?;
    let long: Vec<(usize, f64, f64)> = results
        .iter()
        .flat_map(|(s, err)| err.iter().enumerate().map(move |(i, e)| (s.rollout, i as f64 * a.step.dt, *e)))
        .collect();
    out.write_csv("energy_error.csv", &meta, |w| csv_rows(w, &["rollout", "t", "percent"], &long))?;
    let summaries: Vec<&RolloutSummary> = results.iter().map(|(s, _)| s).collect();
    out.write_csv("summary.csv", &meta, |w| {
        csv_rows(w, &["rollout", "mean_percent", "max_percent", "secular_growth", "diverged_step"], &summaries)
    })?;
    out.write_metadata(&meta)?;
    let finite: Vec<f64> = summaries.iter().map(|s| s.mean_percent).filter(|v| v.is_finite()).collect();
    let growing = summaries.iter().filter(|s| s.secular_growth).count();
    println!(
        "mean relative energy error {:.4}% over {} finite rollouts; secular growth in {}/{}",
        mean(&finite),
        finite.len(),
        growing,
        summaries.len()
    );
    Ok(())
}

fn predict_partial(a: &PartialArgs, seed: u64, out: &OutDir) -> Result<()> {
    let factor = coarse_factor(&a.step)?;
    let enc = load_encoder(&a.encoder)?;
    let model = load_separable(&a.checkpoint)?;
    let params = a.system.params();
    if a.observe < 2 {
        bail!("observe must be at least 2");
    }
    let meta = RunMeta::new(
        "predict-partial",
        seed,
        &config_with_inputs(a, &[("encoder", &a.encoder), ("checkpoint", &a.checkpoint)])?,
    )?;
    let observed_traj = sample_accepted(a.system.energy, &params, &mut rng_for(seed, 0), |s0| {
        ground_truth(s0, &params, a.step.fine_dt, factor, a.observe - 1)
    })?;
    let observed = observe_partial(&observed_traj);
    let estimates = infer_param_ensemble(&enc, &observed, a.stride)?;
    let pred = predict_from_partial(&enc, &model, &observed, a.stride, a.steps, a.step.dt)?;
    let truth = ground_truth(pred.first(), &params, a.step.fine_dt, factor, a.steps)?;
    let err = relative_energy_error(&pred, &truth, &params)?;
    let bounded = boundedness_check(&pred, ESCAPE_RADIUS)?.bounded;
    let names = ["alpha", "beta"];
    let truths = [params.alpha, params.beta];
    let rows: Vec<_> = estimates
        .iter()
        .enumerate()
        .map(|(j, e)| (names[j], truths[j], e.mean, e.stddev, e.samples.len()))
        .collect();
    out.write_csv("estimates.csv", &meta, |w| csv_rows(w, &["param", "true", "mean", "stddev", "windows"], &rows))?;
    write_trajectory(out, "trajectory.csv", &meta, &pred, &params)?;
    write_trajectory(out, "truth.csv", &meta, &truth, &params)?;
    out.write_csv("energy_error.csv", &meta, |w| Ok(write_energy_error_csv(w, a.step.dt, &err)?))?;
    out.write_metadata(&meta)?;
    println!(
        "alpha {:.4} +- {:.4}; mean relative energy error {:.4}%; bounded {}",
        estimates[0].mean,
        estimates[0].stddev,
        mean(&err),
        bounded
    );
    Ok(())
}

fn lyapunov(a: &LyapunovArgs, seed: u64, out: &OutDir) -> Result<()> {
    ensure_positive("time", a.time)?;
    ensure_positive("dt", a.dt)?;
    let learned = a.checkpoint.as_deref().map(load_separable).transpose()?;
    let inputs: Vec<(&str, &Path)> = a.checkpoint.iter().map(|p| ("checkpoint", p.as_path())).collect();
    let meta = RunMeta::new("lyapunov", seed, &config_with_inputs(a, &inputs)?)?;
    let betas = a.beta_grid.as_ref().unwrap_or(&a.grid);
    let cells: Vec<PotentialParams> = a
        .grid
        .0
        .iter()
        .flat_map(|&al| betas.0.iter().map(move |&be| PotentialParams::new(al, be)))
        .collect();
    let n_steps = (a.time / a.dt).round() as usize;
    let rows: Vec<LyapunovRow> = cells
        .par_iter()
        .enumerate()
        .map(|(k, params)| {
            let run = |s0: &PhaseState| match &learned {
                Some(m) => lyapunov_spectrum(m, s0, params, a.dt, n_steps, a.renorm),
                None => lyapunov_spectrum(&symplectic_ml::dynamics::HenonHeiles, s0, params, a.dt, n_steps, a.renorm),
            };
            let lambda_max = match sample_accepted(a.energy, params, &mut rng_for(seed, k as u64), run) {
                Ok(r) => r.maximal,
                Err(e) => {
                    log::warn!("alpha {} beta {}: {e}", params.alpha, params.beta);
                    f64::NAN
                }
            };
            LyapunovRow {
                alpha: params.alpha,
                beta: params.beta,
                lambda_max,
            }
        })
        .collect();
    out.write_csv("lyapunov.csv", &meta, |w| Ok(write_lyapunov_csv(w, &rows)?))?;
    out.write_metadata(&meta)?;
    println!("{} grid points", rows.len());
    Ok(())
}

fn poincare(a: &PoincareArgs, seed: u64, out: &OutDir) -> Result<()> {
    ensure_positive("time", a.time)?;
    ensure_positive("dt", a.dt)?;
    let learned = a.checkpoint.as_deref().map(load_model).transpose()?;
    let inputs: Vec<(&str, &Path)> = a.checkpoint.iter().map(|p| ("checkpoint", p.as_path())).collect();
    let meta = RunMeta::new("poincare", seed, &config_with_inputs(a, &inputs)?)?;
    let params = a.system.params();
    let n_steps = (a.time / a.dt).round() as usize;
    let per_orbit: Vec<Vec<(usize, f64, f64, f64)>> = (0..a.orbits)
        .into_par_iter()
        .map(|k| {
            let run = |s0: &PhaseState| match &learned {
                Some(m) => m.rollout(s0, &params, a.dt, n_steps),
                None => integrate(s0, a.dt, n_steps, &symplectic_ml::dynamics::HenonHeiles, &params),
            };
            match sample_accepted(a.system.energy, &params, &mut rng_for(seed, k as u64), run) {
                Ok(traj) => poincare_section(&traj)
                    .into_iter()
                    .map(|p| (k, p.q_y, p.p_y, p.crossing_time))
                    .collect(),
                Err(e) => {
                    log::warn!("orbit {k}: {e}");
                    Vec::new()
                }
            }
        })
        .collect();
    let rows: Vec<_> = per_orbit.into_iter().flatten().collect();
    out.write_csv("section.csv", &meta, |w| csv_rows(w, &["orbit", "q_y", "p_y", "t"], &rows))?;
    out.write_metadata(&meta)?;
    println!("{} section points", rows.len());
    Ok(())
}

fn infer_params(a: &InferArgs, seed: u64, out: &OutDir) -> Result<()> {
    let enc = load_encoder(&a.encoder)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("encoder", &a.encoder)];
    if let Some(d) = &a.data {
        inputs.push(("data", d));
    }
    let meta = RunMeta::new("infer-params", seed, &config_with_inputs(a, &inputs)?)?;
    let trajs: Vec<Trajectory> = match &a.data {
        Some(path) => load_dataset(path)?.trajectories()?,
        None => {
            let factor = coarse_factor(&a.step)?;
            let (Some(alpha), Some(energy)) = (a.alpha, a.energy) else {
                bail!("--alpha and --energy are required without --data");
            };
            if a.length < 2 {
                bail!("length must be at least 2");
            }
            let params = PotentialParams::new(alpha, a.beta.unwrap_or(alpha));
            (0..a.trajectories)
                .into_par_iter()
                .map(|k| {
                    sample_accepted(energy, &params, &mut rng_for(seed, k as u64), |s0| {
                        ground_truth(s0, &params, a.step.fine_dt, factor, a.length - 1)
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let names = ["alpha", "beta"];
    let mut rows = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let est = infer_param_ensemble(&enc, &observe_partial(t), a.stride)?;
        let truths = [t.params().alpha, t.params().beta];
        for (j, e) in est.iter().enumerate() {
            rows.push((i, names[j], truths[j], e.mean, e.stddev, e.samples.len()));
        }
    }
    out.write_csv("estimates.csv", &meta, |w| {
        csv_rows(w, &["trajectory", "param", "true", "mean", "stddev", "windows"], &rows)
    })?;
    out.write_metadata(&meta)?;
    let alpha_means: Vec<f64> = rows.iter().filter(|r| r.1 == "alpha").map(|r| r.3).collect();
    println!("alpha mean over {} trajectories: {:.4}", alpha_means.len(), mean(&alpha_means));
    Ok(())
}
