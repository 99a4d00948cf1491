//! Operating-point calibration from H0 Monte Carlo runs.
//!
//! Local thresholds are set so that the instantaneous decision condition is
//! positive in a target fraction of node-steps under H0, pooled over nodes.
//! The gateway threshold is the upper quantile of the per-trial maximum of the
//! gateway evidence over H0 trials, which fixes the per-trial false-alarm
//! probability. Calibration draws from stream domains disjoint from
//! evaluation.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::experiment::{run_trial_calibration, TrialContext};
use crate::markers::{self, MarkerField, N_MARKERS};
use crate::node::{eir_score, StrategyConfig, StrategyKind};
use crate::rng::{MasterSeed, StreamDomain};

pub const MIN_GATE_SAMPLES: usize = 10_000;
pub const MIN_GATEWAY_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub local_rate_target: f64,
    pub gate_percentile: f64,
    pub gateway_fa_target: f64,
    /// H0 trials used to set the gateway threshold.
    pub n_cal_trials: usize,
    /// Steps per node in the long H0 marker run used for local thresholds.
    pub n_cal_steps: usize,
    /// Calibration sidecar to reuse (same as `--calibration`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            local_rate_target: 0.02,
            gate_percentile: 0.85,
            gateway_fa_target: 0.05,
            n_cal_trials: 2000,
            n_cal_steps: 4000,
            path: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, field) in [
            (self.local_rate_target, "calibration.local_rate_target"),
            (self.gate_percentile, "calibration.gate_percentile"),
            (self.gateway_fa_target, "calibration.gateway_fa_target"),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(field, "must lie in (0, 1)"));
            }
        }
        if self.n_cal_trials < MIN_GATEWAY_TRIALS {
            return Err(Error::invalid("calibration.n_cal_trials", "must be at least 100"));
        }
        if self.n_cal_steps < 100 {
            return Err(Error::invalid("calibration.n_cal_steps", "must be at least 100"));
        }
        Ok(())
    }
}

/// Quantile with linear interpolation between order statistics of a sorted
/// sample (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(samples: &[f64], p: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Pooled H0 marker samples (clamped values), one entry per node-step.
#[derive(Debug, Clone, Default)]
pub struct LocalSamples {
    pub values: Vec<[f64; N_MARKERS]>,
}

impl LocalSamples {
    /// Simulates `n_steps` H0 steps for every node of the scenario.
    pub fn simulate(cfg: &ExperimentConfig, seed: MasterSeed, domain: StreamDomain, n_steps: usize) -> Self {
        let mut scenario = cfg.scenario.clone();
        scenario.hypothesis = Hypothesis::H0;
        let positions = markers::node_positions(&scenario);
        let mut field = MarkerField::new(&scenario, &cfg.markers, &positions, seed, domain, 0);
        let mut values = Vec::with_capacity(n_steps * positions.len());
        for k in 0..n_steps {
            if k > 0 {
                field.advance(k as f64 * scenario.dt_s);
            }
            values.extend_from_slice(field.values());
        }
        LocalSamples { values }
    }

    pub fn marker(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|x| x[j]).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Marker-2 gate as the `percentile` quantile of H0 marker-2 samples.
pub fn calibrate_gate(marker2: &[f64], percentile: f64) -> Result<f64> {
    if marker2.len() < MIN_GATE_SAMPLES {
        return Err(Error::Calibration(format!(
            "gate needs at least {MIN_GATE_SAMPLES} samples, got {}",
            marker2.len()
        )));
    }
    Ok(quantile(marker2, percentile))
}

/// Calibrated local thresholds of one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalThresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_gate: Option<f64>,
}

impl LocalThresholds {
    pub fn apply(&self, strategy: &StrategyConfig) -> StrategyConfig {
        StrategyConfig {
            thr_1: self.thr_1,
            thr_2: self.thr_2,
            theta: self.theta,
            tau_gate: self.tau_gate,
            ..strategy.clone()
        }
    }
}

fn raw_rate(samples: &LocalSamples, thr: [f64; N_MARKERS]) -> f64 {
    let hits = samples.values.iter().filter(|x| x[0] > thr[0] || x[1] > thr[1]).count();
    hits as f64 / samples.len() as f64
}

/// Sets the local thresholds of `kind` to the target H0 positive rate.
///
/// `tau_gate` must be given for EIR.
pub fn calibrate_local(
    kind: StrategyKind,
    samples: &LocalSamples,
    cfg: &ExperimentConfig,
    tau_gate: Option<f64>,
) -> Result<LocalThresholds> {
    let target = cfg.calibration.local_rate_target;
    if samples.is_empty() {
        return Err(Error::Calibration("no local samples".into()));
    }
    match kind {
        StrategyKind::Tr => Ok(LocalThresholds {
            thr_1: Some(quantile(&samples.marker(0), 1.0 - target)),
            ..Default::default()
        }),
        StrategyKind::Rr => {
            let mu = cfg.markers.mu0;
            let sigma = cfg.markers.sigma;
            let thr = |c: f64| [mu[0] + c * sigma[0], mu[1] + c * sigma[1]];
            // the rate falls as the common z-value c grows
            let (mut lo, mut hi) = (-20.0, 20.0);
            if raw_rate(samples, thr(lo)) < target || raw_rate(samples, thr(hi)) > target {
                return Err(Error::Calibration("RR bisection: target rate not bracketed".into()));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if raw_rate(samples, thr(mid)) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-10 {
                    break;
                }
            }
            let rate = raw_rate(samples, thr(hi));
            if (rate - target).abs() > 1e-3 {
                return Err(Error::Calibration(format!(
                    "RR bisection did not converge: c = {hi:.6}, rate = {rate:.5}, target = {target}"
                )));
            }
            let t = thr(hi);
            Ok(LocalThresholds {
                thr_1: Some(t[0]),
                thr_2: Some(t[1]),
                ..Default::default()
            })
        }
        StrategyKind::Eir => {
            let gate = tau_gate.ok_or_else(|| Error::Calibration("EIR needs the gate first".into()))?;
            let w = cfg.strategy.weights;
            let mut gated: Vec<f64> = samples
                .values
                .iter()
                .filter(|x| x[1] > gate)
                .map(|x| eir_score(x, &w, 0.0))
                .collect();
            if gated.is_empty() {
                return Err(Error::Calibration("no sample passes the marker-2 gate".into()));
            }
            gated.sort_by(f64::total_cmp);
            let within = target * samples.len() as f64 / gated.len() as f64;
            let theta = if within >= 1.0 {
                warn!(
                    "gate passes only {:.4} of H0 samples, below the local target {target}; \
                     every gated sample is positive",
                    gated.len() as f64 / samples.len() as f64
                );
                gated[0] - 1e-12
            } else {
                quantile_sorted(&gated, 1.0 - within)
            };
            Ok(LocalThresholds {
                theta: Some(theta),
                tau_gate: Some(gate),
                ..Default::default()
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayCalibration {
    pub theta_gateway: f64,
    /// Every H0 trial had zero evidence; detection is impossible to calibrate.
    pub degenerate: bool,
}

/// Gateway threshold as the `1 - fa_target` quantile of per-trial H0 maxima.
pub fn calibrate_gateway(maxima: &[f64], fa_target: f64) -> Result<GatewayCalibration> {
    if maxima.len() < MIN_GATEWAY_TRIALS {
        return Err(Error::Calibration(format!(
            "gateway needs at least {MIN_GATEWAY_TRIALS} trials, got {}",
            maxima.len()
        )));
    }
    let theta = quantile(maxima, 1.0 - fa_target);
    let degenerate = theta <= 0.0;
    if degenerate {
        warn!("gateway calibration is degenerate: H0 evidence is identically zero");
    }
    Ok(GatewayCalibration {
        theta_gateway: theta,
        degenerate,
    })
}

/// One entry of the calibration sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub strategy: StrategyKind,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub local: LocalThresholds,
    pub theta_gateway: f64,
    pub degenerate: bool,
}

impl CalibrationEntry {
    pub fn matches(&self, kind: StrategyKind, param: &str, value: Option<f64>, seed: u64) -> bool {
        self.strategy == kind && self.sweep_param == param && self.sweep_value == value && self.seed == seed
    }

    pub fn strategy_config(&self, base: &StrategyConfig) -> StrategyConfig {
        self.local.apply(&base.for_kind(self.strategy))
    }
}

/// The `calibration.json` sidecar.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text)?;
        for e in &file.entries {
            if !e.theta_gateway.is_finite() || e.theta_gateway < 0.0 {
                return Err(Error::invalid("entries.theta_gateway", "must be finite and non-negative"));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        let write_err = |source| Error::Write {
            path: path.to_owned(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(write_err)?;
        }
        std::fs::write(path, text + "\n").map_err(write_err)
    }

    pub fn find(&self, kind: StrategyKind, param: &str, value: Option<f64>, seed: u64) -> Option<&CalibrationEntry> {
        self.entries.iter().find(|e| e.matches(kind, param, value, seed))
    }

    /// Inserts or replaces the entry with the same key.
    pub fn upsert(&mut self, entry: CalibrationEntry) {
        match self
            .entries
            .iter_mut()
            .find(|e| e.matches(entry.strategy, &entry.sweep_param, entry.sweep_value, entry.seed))
        {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }
}

/// Local thresholds for `kind` from fresh H0 marker samples.
pub fn calibrate_local_for(
    kind: StrategyKind,
    cfg: &ExperimentConfig,
    samples: &LocalSamples,
) -> Result<LocalThresholds> {
    let gate = match kind {
        StrategyKind::Eir => Some(calibrate_gate(&samples.marker(1), cfg.calibration.gate_percentile)?),
        _ => None,
    };
    calibrate_local(kind, samples, cfg, gate)
}

/// Runs the H0 end-to-end calibration trials and returns the per-trial
/// maxima of the gateway evidence, in trial order.
pub fn gateway_maxima(cfg: &ExperimentConfig, strategy: &StrategyConfig, seed: MasterSeed) -> Result<Vec<f64>> {
    let ctx = TrialContext::new(cfg, strategy.clone(), None, seed)?;
    Ok((0..cfg.calibration.n_cal_trials as u32)
        .into_par_iter()
        .map(|i| run_trial_calibration(&ctx, i).max_evidence())
        .collect())
}

/// Full calibration of one strategy at one configuration: local thresholds
/// followed by the gateway threshold.
pub fn calibrate_strategy(
    kind: StrategyKind,
    cfg: &ExperimentConfig,
    samples: &LocalSamples,
    seed: MasterSeed,
) -> Result<(StrategyConfig, GatewayCalibration)> {
    let local = calibrate_local_for(kind, cfg, samples)?;
    let strategy = local.apply(&cfg.strategy.for_kind(kind));
    let maxima = gateway_maxima(cfg, &strategy, seed)?;
    let gw = calibrate_gateway(&maxima, cfg.calibration.gateway_fa_target)?;
    Ok((strategy, gw))
}
