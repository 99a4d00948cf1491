use crate::config::Hypothesis;
use crate::error::{Error, Result};
use crate::node::StrategyKind;

use super::trial::TrialRecord;

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub strategy: StrategyKind,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub n_trials: usize,
    pub p_d: Option<f64>,
    pub p_fa: Option<f64>,
    pub c_h0: Option<f64>,
    pub c_h1: Option<f64>,
    /// Mean of `t_det - t_0` over detected H1 trials.
    pub delay_mean_s: Option<f64>,
    pub delay_detected_frac: Option<f64>,
    pub on_fraction: f64,
    pub rising_per_node: f64,
    pub on_duration_mean_s: f64,
    pub theta_gateway: f64,
    pub seed: u64,
}

/// Local ON/OFF statistics pooled over nodes and trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStats {
    pub on_fraction: f64,
    pub rising_per_node: f64,
    /// Mean length of maximal ON runs in seconds; 0 when no run occurred.
    pub on_duration_mean_s: f64,
    /// `false` when there were no ON runs and the duration is undefined.
    pub duration_defined: bool,
    /// Fraction of node-steps where the instantaneous condition held.
    pub raw_positive_rate: f64,
}

impl LocalStats {
    /// Pools already-summed counters.
    pub fn from_counts(node_steps: u64, on_steps: u64, rising: u64, raw_positive: u64, node_trials: u64, dt: f64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        LocalStats {
            on_fraction: ratio(on_steps, node_steps),
            rising_per_node: ratio(rising, node_trials),
            // every maximal ON run starts with exactly one rising edge
            on_duration_mean_s: ratio(on_steps, rising) * dt,
            duration_defined: rising > 0,
            raw_positive_rate: ratio(raw_positive, node_steps),
        }
    }
}

pub fn local_state_stats(records: &[TrialRecord]) -> LocalStats {
    let mut node_steps = 0;
    let mut on_steps = 0;
    let mut rising = 0;
    let mut raw = 0;
    let mut node_trials = 0;
    for r in records {
        node_steps += r.local.node_steps;
        on_steps += r.local.on_steps;
        rising += r.local.rising_edges;
        raw += r.local.raw_positive_steps;
        node_trials += r.n_nodes as u64;
    }
    let dt = records.first().map_or(1.0, |r| r.dt_s);
    LocalStats::from_counts(node_steps, on_steps, rising, raw, node_trials, dt)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn detected_fraction(records: &[TrialRecord]) -> f64 {
    records.iter().filter(|r| r.detection_time_s.is_some()).count() as f64 / records.len() as f64
}

/// Reduces the H0 and H1 records of one (strategy, sweep point).
///
/// At least one of the sets must be non-empty; metrics of a missing
/// hypothesis are left empty. Local statistics come from the H1 records when
/// present.
pub fn aggregate_metrics(
    h0: &[TrialRecord],
    h1: &[TrialRecord],
    t_onset_s: f64,
    t_max_s: f64,
    molecules_per_alarm: f64,
    theta_gateway: f64,
) -> Result<MetricsRow> {
    let any = h1.first().or(h0.first()).ok_or_else(|| Error::Other("no trial records to aggregate".into()))?;
    debug_assert!(h0.iter().all(|r| r.hypothesis == Hypothesis::H0));
    debug_assert!(h1.iter().all(|r| r.hypothesis == Hypothesis::H1));

    let (p_fa, c_h0) = if h0.is_empty() {
        (None, None)
    } else {
        let c = mean(h0.iter().map(|r| molecules_per_alarm * r.emissions_in(0.0, t_max_s) as f64));
        (Some(detected_fraction(h0)), c)
    };

    let (p_d, c_h1, delay, frac) = if h1.is_empty() {
        (None, None, None, None)
    } else {
        let c = mean(h1.iter().map(|r| {
            let t_det = r.detection_time_s.unwrap_or(t_max_s);
            molecules_per_alarm * r.emissions_in(t_onset_s, t_det) as f64
        }));
        let delay = mean(h1.iter().filter_map(|r| r.detection_time_s.map(|t| t - t_onset_s)));
        let pd = detected_fraction(h1);
        (Some(pd), c, delay, Some(pd))
    };

    let stats = local_state_stats(if h1.is_empty() { h0 } else { h1 });
    Ok(MetricsRow {
        strategy: any.strategy,
        sweep_param: String::new(),
        sweep_value: None,
        n_trials: h1.len().max(h0.len()),
        p_d,
        p_fa,
        c_h0,
        c_h1,
        delay_mean_s: delay,
        delay_detected_frac: frac,
        on_fraction: stats.on_fraction,
        rising_per_node: stats.rising_per_node,
        on_duration_mean_s: stats.on_duration_mean_s,
        theta_gateway,
        seed: any.seed.0,
    })
}
