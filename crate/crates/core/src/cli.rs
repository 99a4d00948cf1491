//! Command-line front end.
//!
//! Every flag has a config-file equivalent; flags win when both are given.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::calibration::CalibrationFile;
use crate::config::{load_config, ExperimentConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::experiment::{
    calibrate_point, run_batch, run_sweep, BatchOutput, MetricsRow, PointSpec, RunOptions, SweepAxis,
};
use crate::node::StrategyKind;
use crate::output::{fmt6, write_results};
use crate::trace::{self, Trace};

pub const DEFAULT_OUT_DIR: &str = "results";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const LOCAL_STATS_FILE: &str = "local_stats.csv";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Parser)]
#[command(name = "nanosim", version, about = "Molecular nanonetwork alarm-reporting simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate local and gateway thresholds and write calibration.json.
    Calibrate,
    /// Evaluate strategies at the configured point and write metrics.csv.
    Run,
    /// Run a full sweep along one axis and write metrics.csv.
    Sweep,
    /// Recompute local-state statistics from dumped trace CSVs.
    Stats {
        /// Directory holding `*_trial*.csv` trace files.
        trace_dir: PathBuf,
    },
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed [config: sweep.seed].
    #[arg(long, global = true, env = "NANOSIM_SEED")]
    pub seed: Option<u64>,
    /// Evaluation trials per strategy and hypothesis [config: sweep.n_trials].
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: Option<u32>,
    /// Output directory [config: sweep.out_dir].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Strategies to evaluate [config: sweep.strategies].
    #[arg(long, global = true, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Hypotheses to evaluate with `run` [config: scenario.hypothesis].
    #[arg(long, global = true, value_enum)]
    pub hypothesis: Option<HypothesisArg>,
    /// Sweep axis [config: sweep.axis].
    #[arg(long, global = true, value_enum)]
    pub axis: Option<AxisArg>,
    /// Calibration sidecar to reuse and update [config: calibration.path].
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
    /// Worker threads [config: sweep.threads].
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    /// Write one trace CSV per trial [config: sweep.dump_traces].
    #[arg(long, global = true)]
    pub dump_traces: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Rr,
    Tr,
    Eir,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HypothesisArg {
    H0,
    H1,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Anomaly,
    Noise,
    Network,
    Tinfer,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Anomaly => SweepAxis::Anomaly,
            AxisArg::Noise => SweepAxis::Noise,
            AxisArg::Network => SweepAxis::Network,
            AxisArg::Tinfer => SweepAxis::Tinfer,
        }
    }
}

/// Config after applying command-line overrides.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// Hypotheses evaluated by `run`.
    pub hypotheses: Vec<Hypothesis>,
}

impl Resolved {
    pub fn strategies(&self) -> Vec<StrategyKind> {
        self.config
            .sweep
            .strategies
            .clone()
            .unwrap_or_else(|| StrategyKind::ALL.to_vec())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.config
            .sweep
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Loads the config (or defaults) and applies the flags on top.
pub fn resolve(opts: &CommonArgs) -> Result<Resolved> {
    let mut cfg = match &opts.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.sweep.seed = seed;
    }
    if let Some(n) = opts.trials {
        cfg.sweep.n_trials = n as usize;
    }
    if let Some(out) = &opts.out {
        cfg.sweep.out_dir = Some(out.clone());
    }
    match opts.strategy {
        Some(StrategyArg::All) => cfg.sweep.strategies = None,
        Some(StrategyArg::Rr) => cfg.sweep.strategies = Some(vec![StrategyKind::Rr]),
        Some(StrategyArg::Tr) => cfg.sweep.strategies = Some(vec![StrategyKind::Tr]),
        Some(StrategyArg::Eir) => cfg.sweep.strategies = Some(vec![StrategyKind::Eir]),
        None => {}
    }
    if let Some(axis) = opts.axis {
        cfg.sweep.axis = Some(axis.into());
    }
    if let Some(path) = &opts.calibration {
        cfg.calibration.path = Some(path.clone());
    }
    if let Some(n) = opts.threads {
        cfg.sweep.threads = Some(n as usize);
    }
    if opts.dump_traces {
        cfg.sweep.dump_traces = true;
    }
    let hypotheses = match opts.hypothesis {
        Some(HypothesisArg::H0) => vec![Hypothesis::H0],
        Some(HypothesisArg::H1) => vec![Hypothesis::H1],
        Some(HypothesisArg::Both) => vec![Hypothesis::H0, Hypothesis::H1],
        None => vec![cfg.scenario.hypothesis],
    };
    if let [h] = hypotheses.as_slice() {
        cfg.scenario.hypothesis = *h;
    }
    cfg.validate()?;
    Ok(Resolved { config: cfg, hypotheses })
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Stats { trace_dir } = &cli.command {
        let out = cli.opts.out.clone();
        return stats(trace_dir, out.as_deref());
    }
    let resolved = resolve(&cli.opts)?;
    with_threads(resolved.config.sweep.threads, || match cli.command {
        Command::Calibrate => calibrate(&resolved),
        Command::Run => run(&resolved),
        Command::Sweep => sweep(&resolved),
        Command::Stats { .. } => unreachable!(),
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Other(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(f)
        }
    }
}

fn load_cache(cfg: &ExperimentConfig) -> Result<CalibrationFile> {
    match &cfg.calibration.path {
        Some(path) if path.exists() => {
            info!("reusing calibration from {}", path.display());
            CalibrationFile::load(path)
        }
        _ => Ok(CalibrationFile::default()),
    }
}

fn save_cache(resolved: &Resolved, cache: &CalibrationFile) -> Result<()> {
    cache.save(&resolved.out_dir().join(CALIBRATION_FILE))?;
    if let Some(path) = &resolved.config.calibration.path {
        cache.save(path)?;
    }
    Ok(())
}

fn calibrate(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let kinds = resolved.strategies();
    let seed = crate::MasterSeed(cfg.sweep.seed);
    let mut cache = load_cache(cfg)?;
    match cfg.sweep.axis {
        Some(axis) => {
            for value in sweep_points(cfg, axis) {
                let point_cfg = axis.apply(cfg, value)?;
                calibrate_point(&point_cfg, &PointSpec::on(axis, value), &kinds, seed, &mut cache)?;
            }
        }
        None => {
            calibrate_point(cfg, &PointSpec::baseline(), &kinds, seed, &mut cache)?;
        }
    }
    save_cache(resolved, &cache)
}

fn run(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let opts = RunOptions::from_config(cfg);
    let point = PointSpec::baseline();
    let mut cache = load_cache(cfg)?;
    let entries = calibrate_point(cfg, &point, &resolved.strategies(), opts.seed, &mut cache)?;
    let mut rows = Vec::with_capacity(entries.len());
    for entry in &entries {
        let batch = run_batch(cfg, &point, entry, &resolved.hypotheses, &opts)?;
        if cfg.sweep.dump_traces {
            dump_traces(&resolved.out_dir(), &point, &batch)?;
        }
        rows.push(batch.row);
    }
    finish(resolved, &rows, &cache)
}

fn sweep(resolved: &Resolved) -> Result<()> {
    let cfg = &resolved.config;
    let axis = cfg
        .sweep
        .axis
        .ok_or_else(|| Error::invalid("sweep.axis", "a sweep needs an axis (--axis)"))?;
    let opts = RunOptions::from_config(cfg);
    let points = sweep_points(cfg, axis);
    let mut cache = load_cache(cfg)?;
    let out_dir = resolved.out_dir();
    let rows = run_sweep(cfg, axis, &points, &resolved.strategies(), &opts, &mut cache, |point, batch| {
        if cfg.sweep.dump_traces {
            dump_traces(&out_dir, point, batch)?;
        }
        Ok(())
    })?;
    finish(resolved, &rows, &cache)
}

fn sweep_points(cfg: &ExperimentConfig, axis: SweepAxis) -> Vec<f64> {
    cfg.sweep.points.clone().unwrap_or_else(|| axis.default_points())
}

fn finish(resolved: &Resolved, rows: &[MetricsRow], cache: &CalibrationFile) -> Result<()> {
    let path = resolved.out_dir().join(METRICS_FILE);
    write_results(rows, &path)?;
    save_cache(resolved, cache)?;
    info!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

/// Trace group name: `<strategy>_<hypothesis>_<point>`.
pub fn trace_group(kind: StrategyKind, h: Hypothesis, point: &PointSpec) -> String {
    let point = match point.value {
        Some(v) => format!("{}={}", point.param, fmt6(v)),
        None => point.param.clone(),
    };
    format!(
        "{}_{}_{}",
        kind.label().to_ascii_lowercase(),
        h.to_string().to_ascii_lowercase(),
        point
    )
}

fn dump_traces(out_dir: &Path, point: &PointSpec, batch: &BatchOutput) -> Result<()> {
    let dir = out_dir.join(TRACES_DIR);
    for record in batch.h0.iter().chain(&batch.h1) {
        let group = trace_group(record.strategy, record.hypothesis, point);
        let path = dir.join(trace::trace_file_name(&group, record.trial_index));
        Trace::from_record(record)?.save(&path)?;
    }
    Ok(())
}

fn stats(trace_dir: &Path, out: Option<&Path>) -> Result<()> {
    let groups = trace::stats_for_dir(trace_dir)?;
    if groups.is_empty() {
        return Err(Error::Trace(format!("no trace files in {}", trace_dir.display())));
    }
    trace::write_stats(&groups, std::io::stdout().lock())?;
    if let Some(dir) = out {
        let path = dir.join(LOCAL_STATS_FILE);
        let write_err = |source| Error::Write {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(write_err)?;
        let file = fs::File::create(&path).map_err(write_err)?;
        trace::write_stats(&groups, std::io::BufWriter::new(file))?;
    }
    Ok(())
}
