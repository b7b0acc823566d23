//! Subcommand definitions and their implementations.

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use tcf_core::bundle::Bundle;
use tcf_core::data::load_dataset;
use tcf_core::effects::{evaluate, EvalOptions, Goal};
use tcf_core::json;
use tcf_core::pipeline::{evaluation_set, fit, ExperimentConfig};
use tcf_core::service::{Engine, ForecastRequest, PlanEntry, RecommendRequest, Subject};
use tcf_core::sim::{load_sidecars, save_simulation, selection_bias, simulate, SimModel, SyntheticConfig, TumourParams};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "tcf", version, about = "Counterfactual forecasting under mixed multi-treatment interventions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset with ground-truth and replay sidecars.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a checkpoint on held-out data.
    Evaluate(EvaluateArgs),
    /// Forecast one history under a treatment plan.
    Forecast(QueryArgs),
    /// Rank treatment plans for one history.
    Recommend(RecommendArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Tumour,
    Synthetic,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "tumour")]
    pub model: SimKind,
    /// Simulator parameters as JSON (`{"model": "tumour", ...}`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub gamma_c: Option<f64>,
    #[arg(long)]
    pub gamma_r: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "emit_default_config")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "emit_default_config")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed reduction order; runs with the same seed are bit-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Print the full default configuration and exit.
    #[arg(long)]
    pub emit_default_config: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the checkpoint's tau_max.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Directory for `metrics.json`, `metrics.txt` and `effects.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Request JSON file, `-` for stdin. Replaces `--entity`, `--tau` and `--plan`.
    #[arg(long, conflicts_with_all = ["entity", "plan"])]
    pub request: Option<PathBuf>,
    #[arg(long, required_unless_present = "request")]
    pub entity: Option<String>,
    /// History cut-off; defaults to the whole history.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub tau: usize,
    /// JSON list of `{"offset", "a", "v"?}` entries.
    #[arg(long)]
    pub plan: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GoalArg {
    Minimise,
    Maximise,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long, value_enum, default_value = "minimise")]
    pub goal: GoalArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Train(a) => run_train(a, stdout),
        Command::Evaluate(a) => run_evaluate(a, stdout),
        Command::Forecast(a) => {
            let engine = load_engine(&a.ckpt, &a.data)?;
            let req = forecast_request(&a)?;
            writeln!(stdout, "{}", json::to_pretty(&engine.forecast(&req)?)?)?;
            Ok(())
        }
        Command::Recommend(a) => {
            let engine = load_engine(&a.query.ckpt, &a.query.data)?;
            let req = recommend_request(&a)?;
            writeln!(stdout, "{}", json::to_pretty(&engine.recommend(&req)?)?)?;
            Ok(())
        }
        Command::Serve(a) => {
            let engine = load_engine(&a.ckpt, &a.data)?;
            crate::http::serve(engine, a.port)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin())?
    } else {
        fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?
    };
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| format!("{}: {} at `{}`", path.display(), e.inner(), e.path()).into())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let mut model = match &a.config {
        Some(p) => read_json::<SimModel>(p)?,
        None => match a.model {
            SimKind::Tumour => SimModel::Tumour(TumourParams::default()),
            SimKind::Synthetic => SimModel::Synthetic(SyntheticConfig::default()),
        },
    };
    match &mut model {
        SimModel::Tumour(p) => {
            p.patients = a.patients.unwrap_or(p.patients);
            p.steps = a.steps.unwrap_or(p.steps);
            p.gamma_c = a.gamma_c.unwrap_or(p.gamma_c);
            p.gamma_r = a.gamma_r.unwrap_or(p.gamma_r);
            p.seed = a.seed.unwrap_or(p.seed);
        }
        SimModel::Synthetic(c) => {
            if a.gamma_c.is_some() || a.gamma_r.is_some() {
                return Err("--gamma-c and --gamma-r apply to the tumour simulator only".into());
            }
            c.entities = a.patients.unwrap_or(c.entities);
            c.steps = a.steps.unwrap_or(c.steps);
            c.seed = a.seed.unwrap_or(c.seed);
        }
    }
    let sim = simulate(&model)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_simulation(&sim, &a.out)?;
    info!(
        "wrote {} trajectories to {} (selection bias {:.4})",
        sim.dataset.len(),
        a.out.display(),
        selection_bias(&sim.dataset)
    );
    Ok(())
}

fn run_train(a: TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.emit_default_config {
        writeln!(stdout, "{}", json::to_pretty(&ExperimentConfig::default())?)?;
        return Ok(());
    }
    let (data_path, out) = (a.data.expect("required by clap"), a.out.expect("required by clap"));
    let mut cfg = match &a.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => ExperimentConfig::default(),
    };
    if cfg.schema_version != 1 {
        return Err(format!("config schema_version {} is not supported", cfg.schema_version).into());
    }
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    cfg.train.deterministic |= a.deterministic;
    let data = load_dataset(&data_path)?;
    fs::create_dir_all(&out)?;
    let mut log_file = fs::File::create(out.join("train_log.jsonl"))?;
    let mut write_err = None;
    let fitted = fit(&data, &cfg.model, &cfg.train, |e| {
        info!("epoch {} total {:.6} val_rmse {:?}", e.epoch, e.losses.total, e.val_rmse);
        if let Err(err) = json::write_compact(&mut log_file, e).and_then(|_| writeln!(log_file).map_err(serde_json::Error::io)) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err.into());
    }
    fitted.bundle.save(&out)?;
    info!("checkpoint written to {} (best epoch {})", out.display(), fitted.bundle.manifest.best_epoch);
    Ok(())
}

fn run_evaluate(a: EvaluateArgs, stdout: &mut dyn Write) -> Result<()> {
    let bundle = Bundle::load(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let sidecars = load_sidecars(&a.data)?;
    if sidecars.is_none() {
        info!("no ground-truth sidecars next to {}; reporting factual errors only", a.data.display());
    }
    let test = evaluation_set(&data, &bundle.manifest)?;
    let tau = a.tau.unwrap_or(bundle.model.tau_max());
    let ev = evaluate(
        &bundle.model,
        &test,
        sidecars.as_ref().map(|s| &s.1),
        sidecars.as_ref().map(|s| &s.0),
        EvalOptions::at(tau),
    )?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("metrics.json"), json::to_pretty(&ev.report)? + "\n")?;
            let table = ev.report.to_table();
            fs::write(dir.join("metrics.txt"), &table)?;
            let mut effects = fs::File::create(dir.join("effects.jsonl"))?;
            for e in &ev.effects {
                writeln!(effects, "{}", json::to_line(e)?)?;
            }
            write!(stdout, "{table}")?;
        }
        None => writeln!(stdout, "{}", json::to_pretty(&ev.report)?)?,
    }
    Ok(())
}

pub fn load_engine(ckpt: &Path, data: &Path) -> Result<Engine> {
    Ok(Engine::new(Bundle::load(ckpt)?, load_dataset(data)?))
}

fn plan_entries(plan: &Option<String>) -> Result<Vec<PlanEntry>> {
    match plan {
        None => Ok(Vec::new()),
        Some(text) => {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| format!("--plan: {} at `{}`", e.inner(), e.path()).into())
        }
    }
}

fn subject(q: &QueryArgs) -> Subject {
    Subject {
        entity_id: q.entity.clone(),
        history: None,
        t: q.t,
    }
}

pub fn forecast_request(q: &QueryArgs) -> Result<ForecastRequest> {
    if let Some(p) = &q.request {
        return read_json(p);
    }
    Ok(ForecastRequest {
        schema_version: 1,
        subject: subject(q),
        horizon: q.tau,
        plan: plan_entries(&q.plan)?,
        literal_interaction: false,
    })
}

fn recommend_request(a: &RecommendArgs) -> Result<RecommendRequest> {
    let q = &a.query;
    if let Some(p) = &q.request {
        return read_json(p);
    }
    Ok(RecommendRequest {
        schema_version: 1,
        subject: subject(q),
        horizon: q.tau,
        candidates: None,
        goal: match a.goal {
            GoalArg::Minimise => Goal::Minimise,
            GoalArg::Maximise => Goal::Maximise,
        },
    })
}
