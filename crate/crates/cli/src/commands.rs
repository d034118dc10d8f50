//! Subcommand implementations. Each writes its artifacts under the output
//! directory together with a stamp holding the config hash.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rock_core::evaluation::format_count;
use rock_core::io::{self, MODEL_FORMAT, PDE_MODEL_FORMAT};
use rock_core::{
    count_parameters, cut_trajectories, evaluate, evaluate_pde, forecast_pde, generate, train, train_pde,
    two_stage_search, Dataset, Error, EvalReport, FieldGrid, Integrator, PdeModel, Result, RockModel, Trajectory,
    TrajectorySet,
};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, ExperimentConfig, ModelConfig};

pub const MODEL_FILE: &str = "model.bin";

/// What a command did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Done,
    UpToDate,
}

fn stamp_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!(".{command}.stamp"))
}

/// True when `command` already ran with `hash` and its outputs are still there.
fn up_to_date(dir: &Path, command: &str, hash: &str, outputs: &[PathBuf]) -> bool {
    let Ok(text) = std::fs::read_to_string(stamp_path(dir, command)) else {
        return false;
    };
    let Ok(v) = serde_json::from_str::<Value>(&text) else {
        return false;
    };
    v["config_hash"] == hash && outputs.iter().all(|p| p.exists())
}

fn write_stamp(dir: &Path, command: &str, hash: &str, outputs: &[PathBuf]) -> Result<()> {
    let files: Vec<String> = outputs
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
        .collect();
    let v = json!({ "command": command, "config_hash": hash, "outputs": files });
    write_json(&stamp_path(dir, command), &v)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn combine(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_source(src: &DatasetSource) -> Result<Dataset> {
    match (&src.path, &src.generator) {
        (Some(p), _) => io::read_dataset(p),
        (None, Some(g)) => generate(g),
        (None, None) => Err(Error::Config("dataset has neither path nor generator".into())),
    }
}

fn ode_data(d: Dataset) -> Result<TrajectorySet> {
    match d {
        Dataset::Ode(s) => Ok(s),
        Dataset::Pde(_) => Err(Error::Config("an ODE model needs trajectory data, got a field".into())),
    }
}

fn field_data(d: Dataset) -> Result<FieldGrid> {
    match d {
        Dataset::Pde(g) => Ok(g),
        Dataset::Ode(_) => Err(Error::Config("a PDE model needs field data, got trajectories".into())),
    }
}

pub fn cmd_generate(config: &ExperimentConfig, force: bool) -> Result<Outcome> {
    let dir = config.output_dir();
    let gen = config
        .dataset
        .generator
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs dataset.generator".into()))?;
    let hash = config.hash("generate");
    let test_gen = config.test.as_ref().and_then(|t| t.generator.as_ref());
    let mut outputs = vec![dir.join("data").join("manifest.json")];
    if test_gen.is_some() {
        outputs.push(dir.join("test").join("manifest.json"));
    }
    if !force && up_to_date(dir, "generate", &hash, &outputs) {
        return Ok(Outcome::UpToDate);
    }
    std::fs::create_dir_all(dir)?;
    io::write_dataset(&dir.join("data"), &generate(gen)?, Some(gen), Some(&hash))?;
    if let Some(tg) = test_gen {
        io::write_dataset(&dir.join("test"), &generate(tg)?, Some(tg), Some(&hash))?;
    }
    write_stamp(dir, "generate", &hash, &outputs)?;
    Ok(Outcome::Done)
}

pub fn cmd_train(config: &ExperimentConfig, force: bool) -> Result<Outcome> {
    let dir = config.output_dir();
    let model_cfg = config.model()?;
    let hash = config.hash("train");
    let outputs = vec![dir.join(MODEL_FILE), dir.join("train_log.json")];
    if !force && up_to_date(dir, "train", &hash, &outputs) {
        return Ok(Outcome::UpToDate);
    }
    let data = load_source(&config.dataset)?;
    std::fs::create_dir_all(dir)?;
    let start = Instant::now();
    let log = match model_cfg {
        ModelConfig::Ode { kernel, lambda, p, cut_length, integrator } => {
            let set = ode_data(data)?;
            let set = match cut_length {
                Some(l) => cut_trajectories(&set, *l)?,
                None => set,
            };
            let model = train(&set, kernel, *lambda, *p)?;
            let extra = json!({ "config_hash": hash, "integrator": integrator, "cut_length": cut_length });
            io::save_model(&outputs[0], &model, extra)?;
            let size = count_parameters(&model);
            json!({
                "config_hash": hash,
                "kind": "ode",
                "blocks": model.num_blocks(),
                "samples": set.total_samples(),
                "model_size": size,
                "model_size_display": format_count(size),
                "seconds": start.elapsed().as_secs_f64(),
            })
        }
        ModelConfig::Pde { features, lambda, coarsen } => {
            let grid = field_data(data)?;
            let model = train_pde(&grid, features, *lambda, *coarsen)?;
            io::save_pde_model(&outputs[0], &model, json!({ "config_hash": hash }))?;
            json!({
                "config_hash": hash,
                "kind": "pde",
                "features": model.feature_map().names(),
                "alpha": model.alpha,
                "model_size": model.alpha.len(),
                "seconds": start.elapsed().as_secs_f64(),
            })
        }
    };
    write_json(&outputs[1], &log)?;
    write_stamp(dir, "train", &hash, &outputs)?;
    Ok(Outcome::Done)
}

/// A model file of either kind.
pub enum LoadedModel {
    Ode { model: RockModel, integrator: Integrator },
    Pde(PdeModel),
}

pub fn load_any_model(path: &Path) -> Result<LoadedModel> {
    let format = io::container_format(path)?;
    if format == MODEL_FORMAT {
        let (model, extra) = io::load_model(path)?;
        let integrator = serde_json::from_value(extra["integrator"].clone()).unwrap_or_default();
        Ok(LoadedModel::Ode { model, integrator })
    } else if format == PDE_MODEL_FORMAT {
        Ok(LoadedModel::Pde(io::load_pde_model(path)?.0))
    } else {
        Err(Error::Format {
            path: path.display().to_string(),
            message: format!("unknown model format {format:?}"),
        })
    }
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    model_path: Option<&Path>,
    test_path: Option<&Path>,
    force: bool,
) -> Result<(Outcome, Option<EvalReport>)> {
    let dir = config.output_dir();
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join(MODEL_FILE));
    let source = match test_path {
        Some(p) => DatasetSource { path: Some(p.to_path_buf()), generator: None },
        None => config
            .test
            .clone()
            .ok_or_else(|| Error::Config("evaluate needs --test or a `test` section".into()))?,
    };
    let source_key = serde_json::to_string(&source).expect("source serializes");
    let hash = combine(&[&config.hash("evaluate"), &file_digest(&model_path)?, &source_key]);
    let outputs = vec![dir.join("report.json"), dir.join("report.txt")];
    if !force && up_to_date(dir, "evaluate", &hash, &outputs) {
        return Ok((Outcome::UpToDate, None));
    }
    let data = load_source(&source)?;
    let report = match load_any_model(&model_path)? {
        LoadedModel::Ode { model, integrator } => evaluate(&model, &ode_data(data)?, integrator)?,
        LoadedModel::Pde(model) => evaluate_pde(&model, &field_data(data)?)?,
    };
    std::fs::create_dir_all(dir)?;
    let mut v: Value = serde_json::from_str(&report.to_json()).expect("report json parses");
    v["config_hash"] = json!(hash);
    v["model"] = json!(model_path.display().to_string());
    write_json(&outputs[0], &v)?;
    std::fs::write(&outputs[1], report.to_table())?;
    write_stamp(dir, "evaluate", &hash, &outputs)?;
    Ok((Outcome::Done, Some(report)))
}

pub fn cmd_sweep(config: &ExperimentConfig, force: bool) -> Result<Outcome> {
    let dir = config.output_dir();
    let space = config
        .search
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a `search` section".into()))?;
    let hash = config.hash("sweep");
    let outputs = vec![dir.join(MODEL_FILE), dir.join("sweep_log.jsonl"), dir.join("sweep.json")];
    if !force && up_to_date(dir, "sweep", &hash, &outputs) {
        return Ok(Outcome::UpToDate);
    }
    let data = ode_data(load_source(&config.dataset)?)?;
    let start = Instant::now();
    let outcome = two_stage_search(&data, space)?;
    std::fs::create_dir_all(dir)?;
    let extra = json!({
        "config_hash": hash,
        "integrator": space.integrator,
        "cut_length": outcome.best.cut_length,
    });
    io::save_model(&outputs[0], &outcome.model, extra)?;
    outcome.write_log(&outputs[1])?;
    let summary = json!({
        "config_hash": hash,
        "best": outcome.best,
        "report": serde_json::from_str::<Value>(&outcome.report.to_json()).expect("report json parses"),
        "evaluated": outcome.log.len(),
        "seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&outputs[2], &summary)?;
    write_stamp(dir, "sweep", &hash, &outputs)?;
    Ok(Outcome::Done)
}

/// Initial condition for `forecast`.
pub enum InitialState {
    /// ODE state.
    X0(Vec<f64>),
    /// Field CSV whose first row is the initial profile.
    U0(PathBuf),
}

pub struct ForecastArgs {
    pub model: PathBuf,
    pub initial: InitialState,
    pub horizon: f64,
    pub dt: f64,
    pub integrator: Option<Integrator>,
    pub output_dir: PathBuf,
}

pub fn parse_state(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse {s:?} in initial state")))
        })
        .collect()
}

fn forecast_times(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("need positive horizon and dt, got {horizon} and {dt}")));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

/// The coarse profile the PDE model operates on, taken from the first row of a field CSV.
fn initial_profile(model: &PdeModel, path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = io::read_field_csv(path, model.periodic)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
    let grid = if close(grid.dx(), model.dx) {
        grid
    } else if close(grid.dx() * model.coarsen as f64, model.dx) {
        grid.coarsen(model.coarsen)?
    } else {
        return Err(Error::Data(format!(
            "initial field spacing {} matches neither the model mesh {} nor its fine mesh",
            grid.dx(),
            model.dx
        )));
    };
    Ok((grid.u.row(0).iter().copied().collect(), grid.xs.clone()))
}

pub fn cmd_forecast(args: &ForecastArgs, force: bool) -> Result<Outcome> {
    let dir = &args.output_dir;
    let out = dir.join("forecast.csv");
    let init_key = match &args.initial {
        InitialState::X0(x) => format!("{x:?}"),
        InitialState::U0(p) => file_digest(p)?,
    };
    let hash = combine(&[
        "forecast",
        &file_digest(&args.model)?,
        &init_key,
        &format!("{:e} {:e} {:?}", args.horizon, args.dt, args.integrator),
    ]);
    let outputs = vec![out.clone()];
    if !force && up_to_date(dir, "forecast", &hash, &outputs) {
        return Ok(Outcome::UpToDate);
    }
    let ts = forecast_times(args.horizon, args.dt)?;
    std::fs::create_dir_all(dir)?;
    match (load_any_model(&args.model)?, &args.initial) {
        (LoadedModel::Ode { model, integrator }, InitialState::X0(x0)) => {
            let xs = model.forecast(x0, &ts, args.integrator.unwrap_or(integrator))?;
            io::write_trajectory_csv(&out, &Trajectory::new(ts, xs)?)?;
        }
        (LoadedModel::Pde(model), InitialState::U0(path)) => {
            let (u0, xs) = initial_profile(&model, path)?;
            let u = forecast_pde(&model, &u0, args.dt, ts.len() - 1)?;
            io::write_field_csv(&out, &FieldGrid::new(u, ts, xs, model.periodic)?)?;
        }
        (LoadedModel::Ode { .. }, InitialState::U0(_)) => {
            return Err(Error::Config("an ODE model needs --x0".into()));
        }
        (LoadedModel::Pde(_), InitialState::X0(_)) => {
            return Err(Error::Config("a PDE model needs --u0".into()));
        }
    }
    write_stamp(dir, "forecast", &hash, &outputs)?;
    Ok(Outcome::Done)
}
