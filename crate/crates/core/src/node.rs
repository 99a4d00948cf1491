//! Per-node reporting logic.
//!
//! A node turns its marker vector into a local ON/OFF state with separated ON
//! and OFF thresholds, and emits an alarm on each OFF to ON edge unless the
//! refractory period since its previous committed emission has not elapsed.
//! Emissions are committed at the edge and released after the sensing and
//! inference delays.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markers::N_MARKERS;

/// Slack for comparing times built from sums of grid steps.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "rr", alias = "RR")]
    Rr,
    #[serde(rename = "tr", alias = "TR")]
    Tr,
    #[serde(rename = "eir", alias = "EIR")]
    Eir,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Rr, StrategyKind::Tr, StrategyKind::Eir];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Rr => "RR",
            StrategyKind::Tr => "TR",
            StrategyKind::Eir => "EIR",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(StrategyKind::Rr),
            "tr" => Ok(StrategyKind::Tr),
            "eir" => Ok(StrategyKind::Eir),
            _ => Err(Error::invalid("strategy.kind", format!("unknown strategy `{s}`"))),
        }
    }
}

/// Reporting rule parameters.
///
/// Thresholds (`thr_1`, `thr_2`, `theta`, `tau_gate`) are normally left empty
/// in the config file and filled in by calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub weights: [f64; N_MARKERS],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_gate: Option<f64>,
    pub delta_z: f64,
    pub delta_g: f64,
    /// When an ON EIR node releases.
    pub eir_release: EirRelease,
    /// Release margin below the RR/TR marker thresholds.
    pub delta_thr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thr_2: Option<f64>,
    pub refractory_s: f64,
    pub t_sense_s: f64,
    /// Inference delay; only EIR nodes incur it.
    pub t_infer_s: f64,
    pub molecules_per_alarm: f64,
}

/// Release rule of an ON EIR node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EirRelease {
    /// OFF once the score has fallen below `-delta_z` and marker 2 below
    /// `tau_gate - delta_g`; either one holding keeps the node ON.
    #[default]
    Both,
    /// OFF as soon as either the score or marker 2 falls below its release level.
    Either,
}

pub const DEFAULT_T_INFER_S: f64 = 0.0;

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Eir,
            weights: [1.0, 0.90],
            theta: None,
            tau_gate: None,
            delta_z: 0.03,
            delta_g: 0.01,
            eir_release: EirRelease::Both,
            delta_thr: 0.0,
            thr_1: None,
            thr_2: None,
            refractory_s: 10.0,
            t_sense_s: 0.0,
            t_infer_s: DEFAULT_T_INFER_S,
            molecules_per_alarm: 50.0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, field: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be finite and non-negative"))
            }
        };
        nonneg(self.delta_z, "strategy.delta_z")?;
        nonneg(self.delta_g, "strategy.delta_g")?;
        nonneg(self.delta_thr, "strategy.delta_thr")?;
        nonneg(self.refractory_s, "strategy.refractory_s")?;
        nonneg(self.t_sense_s, "strategy.t_sense_s")?;
        nonneg(self.t_infer_s, "strategy.t_infer_s")?;
        if self.kind != StrategyKind::Eir && self.t_infer_s != 0.0 {
            return Err(Error::invalid(
                "strategy.t_infer_s",
                "only the eir strategy has an inference delay",
            ));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("strategy.weights", "must be finite"));
        }
        if !(self.molecules_per_alarm > 0.0 && self.molecules_per_alarm.is_finite()) {
            return Err(Error::invalid("strategy.molecules_per_alarm", "must be positive"));
        }
        for (v, field) in [
            (self.theta, "strategy.theta"),
            (self.tau_gate, "strategy.tau_gate"),
            (self.thr_1, "strategy.thr_1"),
            (self.thr_2, "strategy.thr_2"),
        ] {
            if let Some(v) = v {
                if v.is_nan() {
                    return Err(Error::invalid(field, "must not be NaN"));
                }
            }
        }
        Ok(())
    }

    /// The parameters as used by strategy `kind`: non-EIR strategies carry no
    /// inference delay.
    pub fn for_kind(&self, kind: StrategyKind) -> StrategyConfig {
        StrategyConfig {
            kind,
            t_infer_s: if kind == StrategyKind::Eir { self.t_infer_s } else { 0.0 },
            ..self.clone()
        }
    }

    /// Delay between a rising edge and the resulting emission.
    pub fn emission_delay(&self) -> f64 {
        let infer = if self.kind == StrategyKind::Eir { self.t_infer_s } else { 0.0 };
        self.t_sense_s + infer
    }

    /// Resolves the thresholds needed by this strategy's decision rule.
    pub fn rule(&self) -> Result<DecisionRule> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::MissingCalibration {
                strategy: self.kind.to_string(),
                point: format!("`{name}` not set"),
            })
        };
        Ok(match self.kind {
            StrategyKind::Rr => DecisionRule::Raw {
                thr: [need(self.thr_1, "thr_1")?, need(self.thr_2, "thr_2")?],
                delta: self.delta_thr,
            },
            StrategyKind::Tr => DecisionRule::Threshold {
                thr_1: need(self.thr_1, "thr_1")?,
                delta: self.delta_thr,
            },
            StrategyKind::Eir => DecisionRule::Inference {
                weights: self.weights,
                theta: need(self.theta, "theta")?,
                tau_gate: need(self.tau_gate, "tau_gate")?,
                delta_z: self.delta_z,
                delta_g: self.delta_g,
                release: self.eir_release,
            },
        })
    }
}

/// A strategy's decision rule with all thresholds resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionRule {
    /// Either marker above its own threshold.
    Raw { thr: [f64; N_MARKERS], delta: f64 },
    /// Marker 1 above its threshold.
    Threshold { thr_1: f64, delta: f64 },
    /// Positive weighted score and marker 2 above the gate.
    Inference {
        weights: [f64; N_MARKERS],
        theta: f64,
        tau_gate: f64,
        delta_z: f64,
        delta_g: f64,
        release: EirRelease,
    },
}

/// Local inference score `w . x - theta`.
#[inline]
pub fn eir_score(x: &[f64; N_MARKERS], weights: &[f64; N_MARKERS], theta: f64) -> f64 {
    weights[0] * x[0] + weights[1] * x[1] - theta
}

/// Instantaneous decision without hysteresis.
pub fn local_condition(rule: &DecisionRule, x: &[f64; N_MARKERS]) -> bool {
    match *rule {
        DecisionRule::Raw { thr, .. } => x[0] > thr[0] || x[1] > thr[1],
        DecisionRule::Threshold { thr_1, .. } => x[0] > thr_1,
        DecisionRule::Inference {
            weights,
            theta,
            tau_gate,
            ..
        } => eir_score(x, &weights, theta) > 0.0 && x[1] > tau_gate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Logic {
    On,
    #[default]
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub node_index: usize,
    pub emit_time_s: f64,
    pub distance_um: f64,
    pub molecules: f64,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub index: usize,
    pub distance_um: f64,
    pub logic: Logic,
    /// Per-marker hysteretic sub-states of the RR and TR rules.
    marker_on: [bool; N_MARKERS],
    /// Time of the latest committed emission.
    pub last_emission_time: Option<f64>,
    pub pending_emissions: VecDeque<f64>,
}

impl NodeState {
    pub fn new(index: usize, distance_um: f64) -> Self {
        NodeState {
            index,
            distance_um,
            logic: Logic::Off,
            marker_on: [false; N_MARKERS],
            last_emission_time: None,
            pending_emissions: VecDeque::new(),
        }
    }

    pub fn is_on(&self) -> bool {
        self.logic == Logic::On
    }

    /// Applies the hysteretic transition rule for marker vector `x`.
    ///
    /// Returns `true` exactly on an OFF to ON transition.
    pub fn advance(&mut self, rule: &DecisionRule, x: &[f64; N_MARKERS]) -> bool {
        let was_on = self.is_on();
        let now_on = match *rule {
            DecisionRule::Raw { thr, delta } => {
                for j in 0..N_MARKERS {
                    self.marker_on[j] = hysteresis(self.marker_on[j], x[j], thr[j], delta);
                }
                self.marker_on.iter().any(|&on| on)
            }
            DecisionRule::Threshold { thr_1, delta } => {
                self.marker_on[0] = hysteresis(self.marker_on[0], x[0], thr_1, delta);
                self.marker_on[0]
            }
            DecisionRule::Inference {
                weights,
                theta,
                tau_gate,
                delta_z,
                delta_g,
                release,
            } => {
                let z = eir_score(x, &weights, theta);
                if was_on {
                    let score_low = z < -delta_z;
                    let gate_low = x[1] < tau_gate - delta_g;
                    match release {
                        EirRelease::Both => !(score_low && gate_low),
                        EirRelease::Either => !(score_low || gate_low),
                    }
                } else {
                    z > 0.0 && x[1] > tau_gate
                }
            }
        };
        self.logic = if now_on { Logic::On } else { Logic::Off };
        !was_on && now_on
    }

    /// Commits an emission for a rising edge at `edge_time_s`, subject to the
    /// refractory period. Emissions that would fall after `t_max_s` are dropped.
    pub fn schedule_emission(
        &mut self,
        edge_time_s: f64,
        strategy: &StrategyConfig,
        t_max_s: f64,
    ) -> Option<EmissionEvent> {
        let emit_time_s = edge_time_s + strategy.emission_delay();
        if let Some(last) = self.last_emission_time {
            if emit_time_s - last < strategy.refractory_s - TIME_EPS {
                return None;
            }
        }
        if emit_time_s > t_max_s + TIME_EPS {
            return None;
        }
        self.last_emission_time = Some(emit_time_s);
        self.pending_emissions.push_back(emit_time_s);
        Some(EmissionEvent {
            node_index: self.index,
            emit_time_s,
            distance_um: self.distance_um,
            molecules: strategy.molecules_per_alarm,
        })
    }

    /// Pops committed emissions whose release time is at or before `t_s`.
    pub fn realize_due(&mut self, t_s: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self
            .pending_emissions
            .iter()
            .take_while(|&&t| t <= t_s + TIME_EPS)
            .count();
        self.pending_emissions.drain(..n)
    }
}

#[inline]
fn hysteresis(on: bool, x: f64, thr: f64, delta: f64) -> bool {
    if on {
        x >= thr - delta
    } else {
        x > thr
    }
}
