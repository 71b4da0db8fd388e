//! Command-line driver: data generation and conversion, training,
//! evaluation, prediction export, gradient checking and inspection.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use stdn_core::data::{
    convert_matrix_dump, load_edges_csv, load_flow_binary, make_windows, split_622, synth_generate,
    write_edges_csv, write_flow_binary, Calendar, DatasetSplits, FlowSeries, Normalizer, SampleWindow, SynthParams,
    TRAIN_FRACTION,
};
use stdn_core::graph::{AdjacencyMode, GraphSpec, Matrix};
use stdn_core::model::{Batch, Model, ModelConfig};
use stdn_core::train::{
    evaluate, evaluate_ha, grad_check, grad_check_csv, history_csv, read_checkpoint, save_checkpoint, train,
    GradCheckSettings,
};
use stdn_tensor::{Precision, Scalar, Tape};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] stdn_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gradient check failed for {0} parameter(s)")]
    GradCheck(usize),
}

impl CliError {
    /// 0 success, 1 usage or I/O, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(stdn_core::Error::Diverged { .. } | stdn_core::Error::NoConvergence { .. })
            | CliError::GradCheck(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! dispatch {
    ($precision:expr, $f:ident($($arg:expr),*)) => {
        match $precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Parser)]
#[command(name = "stdn", version, about = "Traffic forecasting with trend-seasonality decomposition")]
pub struct Cli {
    /// Worker threads for evaluation passes (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (flow file and edge list).
    GenData(GenDataArgs),
    /// Convert a text matrix dump (one step per row) to a flow file.
    Convert(ConvertArgs),
    /// Train a model; writes best.stdc, history.csv and config.ini.
    Train(TrainArgs),
    /// Print MAE/RMSE/MAPE of a checkpoint and of the historical average.
    Eval(EvalArgs),
    /// Write raw-scale predictions for one horizon step as a flow file.
    Predict(PredictArgs),
    /// Finite-difference gradient check of the full model in double precision.
    GradCheck(GradCheckArgs),
    /// Print graph size, component count and the smallest Laplacian eigenvalues.
    InspectGraph(InspectGraphArgs),
    /// Print per-node mean |trend| and |seasonal| for one sample.
    InspectDecomposition(InspectDecompositionArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..))]
    pub nodes: u32,
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u32).range(1..))]
    pub days: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for flow.stdn and edges.csv.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 288)]
    pub steps_per_day: usize,
    #[arg(long, default_value_t = 0)]
    pub start_day_of_week: usize,
    #[arg(long, default_value_t = 0)]
    pub start_slot: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for initialization and shuffling (overrides train.seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn pick(self, splits: &DatasetSplits) -> &[SampleWindow] {
        match self {
            Split::Train => &splits.train,
            Split::Val => &splits.val,
            Split::Test => &splits.test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Horizon step to export, 1-based.
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Also check the trainable mixing weights.
    #[arg(long)]
    pub trainable_mixing: bool,
}

#[derive(Debug, Args)]
pub struct InspectGraphArgs {
    #[arg(long)]
    pub edges: PathBuf,
    /// Node count; defaults to the largest node id plus one.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value = "binary")]
    pub adjacency: String,
}

#[derive(Debug, Args)]
pub struct InspectDecompositionArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Sample index within the split.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut out = String::new();
    let result = execute(&cli, &mut out);
    print!("{out}");
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, appending its standard output to `out`.
pub fn execute(cli: &Cli, out: &mut String) -> Result<()> {
    let threads = cli.threads as usize;
    match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Convert(a) => convert(a, out),
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            dispatch!(cfg.model.precision, cmd_train(&cfg, threads, &a.out, out))
        }
        Command::Eval(a) => {
            let cfg = a.config.resolve()?;
            dispatch!(cfg.model.precision, cmd_eval(&cfg, threads, a, out))
        }
        Command::Predict(a) => {
            let cfg = a.config.resolve()?;
            dispatch!(cfg.model.precision, cmd_predict(&cfg, a))
        }
        Command::GradCheck(a) => cmd_grad_check(a, out),
        Command::InspectGraph(a) => inspect_graph(a, out),
        Command::InspectDecomposition(a) => {
            let cfg = a.config.resolve()?;
            dispatch!(cfg.model.precision, cmd_inspect_decomposition(&cfg, a, out))
        }
    }
}

fn gen_data(a: &GenDataArgs, out: &mut String) -> Result<()> {
    let params = SynthParams { nodes: a.nodes as usize, days: a.days as usize, seed: a.seed, ..Default::default() };
    let (series, graph) = synth_generate(&params)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let flow = a.out.join("flow.stdn");
    let edges = a.out.join("edges.csv");
    write_flow_binary(&flow, &series)?;
    write_edges_csv(&edges, &graph.edges)?;
    let (t, n, c) = series.shape();
    let _ = writeln!(
        out,
        "wrote {} ({t} steps, {n} nodes, {c} channel) and {} ({} edges, {} component(s))",
        flow.display(),
        edges.display(),
        graph.edges.len(),
        graph.components()
    );
    Ok(())
}

fn convert(a: &ConvertArgs, out: &mut String) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(io_err(&a.input))?;
    let calendar = Calendar::new(a.steps_per_day, a.start_day_of_week, a.start_slot)?;
    let series = convert_matrix_dump(&text, a.channels, calendar)?;
    write_flow_binary(&a.out, &series)?;
    let (t, n, c) = series.shape();
    let _ = writeln!(out, "wrote {} ({t} steps, {n} nodes, {c} channel(s))", a.out.display());
    Ok(())
}

/// Everything a model needs from the data files.
pub struct Prepared {
    pub series: FlowSeries,
    pub graph: GraphSpec,
    pub basis: Matrix,
    pub normalizer: Normalizer,
    pub splits: DatasetSplits,
    pub model: ModelConfig,
}

/// Loads the flow and edge files named in `cfg`, fits the normalizer on
/// the training span and builds the windows, splits and spectral basis.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mut series = load_flow_binary(&cfg.data.flow)?;
    let edges = load_edges_csv(&cfg.data.edges)?;
    let (_, nodes, channels) = series.shape();
    let graph = GraphSpec::new(nodes, edges, cfg.data.adjacency)?;
    let spectral = graph.spectral_basis(cfg.embedding.spectral_k);
    let normalizer = series.fit_normalizer(TRAIN_FRACTION)?.clone();
    let windows = make_windows(&series, cfg.data.input_len, cfg.data.output_len)?;
    let splits = split_622(windows)?;
    let model = cfg.model_config(nodes, channels, series.calendar().steps_per_day);
    Ok(Prepared { series, graph, basis: spectral.matrix, normalizer, splits, model })
}

fn build_model<S: Scalar>(prep: &Prepared, seed: u64) -> Result<Model<S>> {
    Ok(Model::new(prep.model.clone(), &prep.basis, prep.normalizer.clone(), seed)?)
}

fn load_model<S: Scalar>(prep: &Prepared, cfg: &RunConfig, checkpoint: &Path) -> Result<Model<S>> {
    let mut model = build_model::<S>(prep, cfg.train.seed)?;
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.precision != S::PRECISION {
        info!("checkpoint is {}, model runs in {}", ckpt.precision.name(), S::PRECISION.name());
    }
    ckpt.load_into(model.params_mut())?;
    Ok(model)
}

fn cmd_train<S: Scalar>(cfg: &RunConfig, threads: usize, dir: &Path, out: &mut String) -> Result<()> {
    let prep = prepare(cfg)?;
    let mut model = build_model::<S>(&prep, cfg.train.seed)?;
    info!(
        "training on {} windows ({} val, {} test), {} parameters",
        prep.splits.train.len(),
        prep.splits.val.len(),
        prep.splits.test.len(),
        model.params().ids().map(|id| model.params().get(id).numel()).sum::<usize>()
    );
    let outcome = train(&mut model, &prep.splits, &cfg.train_config(threads), |_, _| {})?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let history = dir.join("history.csv");
    fs::write(&history, history_csv(&outcome.history)).map_err(io_err(&history))?;
    save_checkpoint(dir.join("best.stdc"), &outcome.best)?;
    let used = dir.join("config.ini");
    fs::write(&used, cfg.to_text()).map_err(io_err(&used))?;
    let best = &outcome.history[outcome.best_epoch.max(1) - 1];
    let _ = writeln!(
        out,
        "epochs {}{}, best epoch {} with val MAE {:.4} RMSE {:.4} MAPE {:.2}%",
        outcome.history.len(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_epoch,
        best.val.mae,
        best.val.rmse,
        best.val.mape
    );
    Ok(())
}

fn cmd_eval<S: Scalar>(cfg: &RunConfig, threads: usize, a: &EvalArgs, out: &mut String) -> Result<()> {
    let prep = prepare(cfg)?;
    let model = load_model::<S>(&prep, cfg, &a.checkpoint)?;
    let samples = a.split.pick(&prep.splits);
    let m = evaluate(&model, samples, cfg.train.batch_size, threads)?;
    let ha = evaluate_ha(samples, &prep.normalizer)?;
    let split = a.split.name();
    let _ = writeln!(out, "model,split,mae,rmse,mape");
    let _ = writeln!(out, "stdn,{split},{},{},{}", m.mae, m.rmse, m.mape);
    let _ = writeln!(out, "ha,{split},{},{},{}", ha.mae, ha.rmse, ha.mape);
    Ok(())
}

fn cmd_predict<S: Scalar>(cfg: &RunConfig, a: &PredictArgs) -> Result<()> {
    let prep = prepare(cfg)?;
    let (tp, n, c) = (prep.model.output_len, prep.model.nodes, prep.model.channels);
    if a.horizon == 0 || a.horizon > tp {
        return Err(CliError::Usage(format!("--horizon must be in 1..={tp}")));
    }
    let model = load_model::<S>(&prep, cfg, &a.checkpoint)?;
    let samples = a.split.pick(&prep.splits);
    let first = samples.first().ok_or_else(|| CliError::Usage(format!("{} split is empty", a.split.name())))?;
    let step = a.horizon - 1;
    let mut values = Vec::with_capacity(samples.len() * n * c);
    for chunk in samples.chunks(cfg.train.batch_size) {
        let pred = model.predict(&Batch::<S>::from_windows(chunk)?)?;
        for b in 0..chunk.len() {
            let at = (b * tp + step) * n * c;
            values.extend(pred.data()[at..at + n * c].iter().map(|v| v.as_f64() as f32));
        }
    }
    // The exported series starts at the first predicted time step.
    let cal = prep.series.calendar();
    let t0 = first.start + prep.model.input_len + step;
    let calendar = Calendar::new(cal.steps_per_day, cal.day_of_week(t0), cal.time_of_day(t0))?;
    let series = FlowSeries::new(values, samples.len(), n, c, calendar)?;
    write_flow_binary(&a.out, &series)?;
    Ok(())
}

fn cmd_grad_check(a: &GradCheckArgs, out: &mut String) -> Result<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let settings = GradCheckSettings { trainable_mixing: a.trainable_mixing, ..Default::default() };
    let mut rows = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        rows.extend(grad_check(seed, &settings)?);
    }
    out.push_str(&grad_check_csv(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    info!("{} checks, worst relative error {worst:e}", rows.len());
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(())
}

fn inspect_graph(a: &InspectGraphArgs, out: &mut String) -> Result<()> {
    let edges = load_edges_csv(&a.edges)?;
    let nodes = match a.nodes {
        Some(n) => n,
        None => edges.iter().map(|e| e.from.max(e.to) + 1).max().unwrap_or(0),
    };
    let mode: AdjacencyMode = a.adjacency.parse()?;
    let edge_count = edges.len();
    let graph = GraphSpec::new(nodes, edges, mode)?;
    let shown = &graph.eigen.values[..graph.eigen.values.len().min(10)];
    let mut header = String::from("nodes,edges,components");
    let mut row = format!("{nodes},{edge_count},{}", graph.components());
    for (i, v) in shown.iter().enumerate() {
        let _ = write!(header, ",lambda_{i}");
        let _ = write!(row, ",{v}");
    }
    let _ = writeln!(out, "{header}\n{row}");
    Ok(())
}

fn cmd_inspect_decomposition<S: Scalar>(cfg: &RunConfig, a: &InspectDecompositionArgs, out: &mut String) -> Result<()> {
    let prep = prepare(cfg)?;
    let model = load_model::<S>(&prep, cfg, &a.checkpoint)?;
    let samples = a.split.pick(&prep.splits);
    let sample = samples.get(a.sample).ok_or_else(|| {
        CliError::Usage(format!("sample {} out of range for the {} split ({} samples)", a.sample, a.split.name(), samples.len()))
    })?;
    let batch = Batch::<S>::from_windows([sample])?;
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &batch)?;
    // trend and seasonal are [1, T, N, D]
    let shape = tape.shape(fwd.trend).to_vec();
    let (t, n, d) = (shape[1], shape[2], shape[3]);
    let node_means = |data: &[S]| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for (i, v) in data.iter().enumerate() {
            acc[i / d % n] += v.as_f64().abs();
        }
        acc.iter().map(|s| s / (t * d) as f64).collect()
    };
    let trend = node_means(tape.data(fwd.trend));
    let seasonal = node_means(tape.data(fwd.seasonal));
    let _ = writeln!(out, "node,mean_abs_trend,mean_abs_seasonal");
    for i in 0..n {
        let _ = writeln!(out, "{i},{},{}", trend[i], seasonal[i]);
    }
    Ok(())
}
