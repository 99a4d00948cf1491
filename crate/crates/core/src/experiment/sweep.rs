use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, CalibrationEntry, CalibrationFile, LocalSamples};
use crate::config::{ExperimentConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::node::StrategyKind;
use crate::rng::{MasterSeed, StreamDomain, DEFAULT_SEED};

use super::metrics::{aggregate_metrics, MetricsRow};
use super::trial::{run_trial, TrialContext, TrialRecord};

/// Ratio `a_2 / a_1` along the anomaly axis.
pub const ANOMALY_COUPLING: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Coupled anomaly amplitudes `(a_1, 0.4 a_1)`.
    Anomaly,
    /// Marker-1 noise level `sigma_1`.
    Noise,
    /// Number of nodes.
    Network,
    /// EIR inference delay.
    Tinfer,
}

impl SweepAxis {
    pub fn param(self) -> &'static str {
        match self {
            SweepAxis::Anomaly => "a_1",
            SweepAxis::Noise => "sigma_1",
            SweepAxis::Network => "n_nodes",
            SweepAxis::Tinfer => "t_infer_s",
        }
    }

    pub fn default_points(self) -> Vec<f64> {
        match self {
            SweepAxis::Anomaly => vec![0.03, 0.06, 0.10, 0.15, 0.20],
            SweepAxis::Noise => vec![0.08, 0.12, 0.16, 0.20],
            SweepAxis::Network => vec![20.0, 40.0, 60.0, 80.0, 100.0],
            SweepAxis::Tinfer => vec![0.0, 30.0, 60.0, 90.0, 120.0],
        }
    }

    /// `cfg` moved to sweep coordinate `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::Anomaly => out.markers.a = [value, ANOMALY_COUPLING * value],
            SweepAxis::Noise => out.markers.sigma[0] = value,
            SweepAxis::Network => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::invalid("sweep.points", format!("node count {value} is not a positive integer")));
                }
                out.scenario.n_nodes = value as usize;
            }
            SweepAxis::Tinfer => out.strategy.t_infer_s = value,
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Anomaly => "anomaly",
            SweepAxis::Noise => "noise",
            SweepAxis::Network => "network",
            SweepAxis::Tinfer => "tinfer",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anomaly" => Ok(SweepAxis::Anomaly),
            "noise" => Ok(SweepAxis::Noise),
            "network" => Ok(SweepAxis::Network),
            "tinfer" => Ok(SweepAxis::Tinfer),
            _ => Err(Error::invalid("sweep.axis", format!("unknown axis `{s}`"))),
        }
    }
}

/// Experiment-level settings; each has a command-line flag that overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    /// Overrides the axis' default grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
    /// Evaluation trials per (strategy, point, hypothesis).
    pub n_trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<StrategyKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub dump_traces: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: None,
            points: None,
            n_trials: 500,
            seed: DEFAULT_SEED,
            strategies: None,
            threads: None,
            dump_traces: false,
            out_dir: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::invalid("sweep.n_trials", "must be at least 1"));
        }
        if self.n_trials > u32::MAX as usize {
            return Err(Error::invalid("sweep.n_trials", "too many trials"));
        }
        if let Some(points) = &self.points {
            if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
                return Err(Error::invalid("sweep.points", "must be a non-empty list of finite values"));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("sweep.threads", "must be at least 1"));
        }
        if matches!(&self.strategies, Some(s) if s.is_empty()) {
            return Err(Error::invalid("sweep.strategies", "must not be empty"));
        }
        Ok(())
    }
}

/// Coordinates of one sweep point as reported in the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSpec {
    pub param: String,
    pub value: Option<f64>,
}

impl PointSpec {
    pub fn baseline() -> Self {
        PointSpec {
            param: "baseline".into(),
            value: None,
        }
    }

    pub fn on(axis: SweepAxis, value: f64) -> Self {
        PointSpec {
            param: axis.param().into(),
            value: Some(value),
        }
    }
}

impl fmt::Display for PointSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}={}", self.param, v),
            None => f.write_str(&self.param),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub n_trials: usize,
    pub seed: MasterSeed,
    pub keep_traces: bool,
}

impl RunOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        RunOptions {
            n_trials: cfg.sweep.n_trials,
            seed: MasterSeed(cfg.sweep.seed),
            keep_traces: cfg.sweep.dump_traces,
        }
    }
}

/// Result of evaluating one strategy at one point.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub row: MetricsRow,
    pub calibration: CalibrationEntry,
    pub h0: Vec<TrialRecord>,
    pub h1: Vec<TrialRecord>,
}

fn calibrate_entry(
    cfg: &ExperimentConfig,
    point: &PointSpec,
    kind: StrategyKind,
    samples: &LocalSamples,
    seed: MasterSeed,
) -> Result<CalibrationEntry> {
    let (strategy, gw) = calibration::calibrate_strategy(kind, cfg, samples, seed)?;
    info!("calibrated {kind} at {point}: theta_gateway = {:.6}", gw.theta_gateway);
    Ok(CalibrationEntry {
        strategy: kind,
        sweep_param: point.param.clone(),
        sweep_value: point.value,
        seed: seed.0,
        local: calibration::LocalThresholds {
            thr_1: strategy.thr_1,
            thr_2: strategy.thr_2,
            theta: strategy.theta,
            tau_gate: strategy.tau_gate,
        },
        theta_gateway: gw.theta_gateway,
        degenerate: gw.degenerate,
    })
}

/// Calibrates every strategy in `kinds` at one point, reusing entries already
/// present in `cache` and inserting new ones.
pub fn calibrate_point(
    cfg: &ExperimentConfig,
    point: &PointSpec,
    kinds: &[StrategyKind],
    seed: MasterSeed,
    cache: &mut CalibrationFile,
) -> Result<Vec<CalibrationEntry>> {
    let mut samples = None;
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        if let Some(entry) = cache.find(kind, &point.param, point.value, seed.0) {
            out.push(entry.clone());
            continue;
        }
        let samples = samples.get_or_insert_with(|| {
            LocalSamples::simulate(cfg, seed, StreamDomain::LocalCalibration, cfg.calibration.n_cal_steps)
        });
        let entry = calibrate_entry(cfg, point, kind, samples, seed)?;
        cache.upsert(entry.clone());
        out.push(entry);
    }
    Ok(out)
}

/// Evaluates one calibrated strategy under the given hypotheses.
pub fn run_batch(
    cfg: &ExperimentConfig,
    point: &PointSpec,
    entry: &CalibrationEntry,
    hypotheses: &[Hypothesis],
    opts: &RunOptions,
) -> Result<BatchOutput> {
    let strategy = entry.strategy_config(&cfg.strategy);
    let ctx = TrialContext::new(cfg, strategy.clone(), Some(entry.theta_gateway), opts.seed)?
        .with_traces(opts.keep_traces);
    let run = |h: Hypothesis| -> Vec<TrialRecord> {
        if !hypotheses.contains(&h) {
            return Vec::new();
        }
        (0..opts.n_trials as u32)
            .into_par_iter()
            .map(|i| run_trial(&ctx, h, i))
            .collect()
    };
    let h0 = run(Hypothesis::H0);
    let h1 = run(Hypothesis::H1);
    let mut row = aggregate_metrics(
        &h0,
        &h1,
        cfg.scenario.t_onset_s,
        cfg.scenario.t_max_s,
        strategy.molecules_per_alarm,
        entry.theta_gateway,
    )?;
    row.sweep_param = point.param.clone();
    row.sweep_value = point.value;
    Ok(BatchOutput {
        row,
        calibration: entry.clone(),
        h0,
        h1,
    })
}

/// Calibrates and evaluates every strategy at one point under both
/// hypotheses.
pub fn run_point(
    cfg: &ExperimentConfig,
    point: &PointSpec,
    kinds: &[StrategyKind],
    opts: &RunOptions,
    cache: &mut CalibrationFile,
) -> Result<Vec<BatchOutput>> {
    let entries = calibrate_point(cfg, point, kinds, opts.seed, cache)?;
    entries
        .iter()
        .map(|e| run_batch(cfg, point, e, &[Hypothesis::H0, Hypothesis::H1], opts))
        .collect()
}

/// Runs a sweep over `points` of `axis`, one row per (point, strategy) in
/// point-major order. `on_batch` sees every batch before its records are
/// dropped.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    points: &[f64],
    kinds: &[StrategyKind],
    opts: &RunOptions,
    cache: &mut CalibrationFile,
    mut on_batch: impl FnMut(&PointSpec, &BatchOutput) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::with_capacity(points.len() * kinds.len());
    for &value in points {
        let point_cfg = axis.apply(cfg, value)?;
        let point = PointSpec::on(axis, value);
        info!("sweep {axis}: {point}");
        for batch in run_point(&point_cfg, &point, kinds, opts, cache)? {
            on_batch(&point, &batch)?;
            rows.push(batch.row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let cfg = ExperimentConfig::default();
        let c = SweepAxis::Anomaly.apply(&cfg, 0.10).unwrap();
        assert_eq!(c.markers.a[0], 0.10);
        assert!((c.markers.a[1] - 0.040).abs() < 1e-15);
        assert_eq!(SweepAxis::Noise.apply(&cfg, 0.08).unwrap().markers.sigma, [0.08, 0.05]);
        assert_eq!(SweepAxis::Network.apply(&cfg, 20.0).unwrap().scenario.n_nodes, 20);
        assert!(SweepAxis::Network.apply(&cfg, 20.5).is_err());
        assert_eq!(SweepAxis::Tinfer.apply(&cfg, 60.0).unwrap().strategy.t_infer_s, 60.0);
    }

    #[test]
    fn axis_names() {
        for axis in [SweepAxis::Anomaly, SweepAxis::Noise, SweepAxis::Network, SweepAxis::Tinfer] {
            assert_eq!(axis.to_string().parse::<SweepAxis>().unwrap(), axis);
        }
        assert!("delay".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn anomaly_grid_keeps_coupling() {
        let a2 = [0.012, 0.024, 0.040, 0.060, 0.080];
        for (a1, a2) in SweepAxis::Anomaly.default_points().into_iter().zip(a2) {
            assert!((ANOMALY_COUPLING * a1 - a2).abs() < 1e-12);
        }
    }
}
