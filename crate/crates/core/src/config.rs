//! Experiment configuration: one JSON object per subsystem.
//!
//! Every field has a default, so `{}` is a valid file describing the baseline
//! scenario. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::experiment::SweepConfig;
use crate::gateway::GatewayConfig;
use crate::markers::MarkerModel;
use crate::node::StrategyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Hypothesis {
    #[default]
    #[serde(alias = "h0")]
    H0,
    #[serde(alias = "h1")]
    H1,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

impl FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h0" => Ok(Hypothesis::H0),
            "h1" => Ok(Hypothesis::H1),
            _ => Err(Error::invalid("scenario.hypothesis", format!("unknown hypothesis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `x_i = (i + 0.5) L / N`.
    #[default]
    Midcell,
    /// Independent uniform positions per trial, sorted.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub length_um: f64,
    pub gateway_pos_um: f64,
    pub anomaly_pos_um: f64,
    pub n_nodes: usize,
    pub dt_s: f64,
    pub t_max_s: f64,
    pub t_onset_s: f64,
    pub hypothesis: Hypothesis,
    pub placement: Placement,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            length_um: 1000.0,
            gateway_pos_um: 0.0,
            anomaly_pos_um: 750.0,
            n_nodes: 50,
            dt_s: 1.0,
            t_max_s: 300.0,
            t_onset_s: 30.0,
            hypothesis: Hypothesis::H0,
            placement: Placement::Midcell,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_um > 0.0 && self.length_um.is_finite()) {
            return Err(Error::invalid("scenario.length_um", "must be positive"));
        }
        if !(self.gateway_pos_um >= 0.0 && self.gateway_pos_um < self.length_um) {
            return Err(Error::invalid("scenario.gateway_pos_um", "must lie in [0, length_um)"));
        }
        if !(self.anomaly_pos_um >= 0.0 && self.anomaly_pos_um <= self.length_um) {
            return Err(Error::invalid("scenario.anomaly_pos_um", "must lie in [0, length_um]"));
        }
        if self.n_nodes == 0 {
            return Err(Error::invalid("scenario.n_nodes", "must be at least 1"));
        }
        if self.n_nodes >= 1 << 24 {
            return Err(Error::invalid("scenario.n_nodes", "too many nodes"));
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::invalid("scenario.dt_s", "must be positive"));
        }
        if !(self.t_max_s.is_finite() && self.t_onset_s >= 0.0 && self.t_onset_s < self.t_max_s) {
            return Err(Error::invalid("scenario.t_onset_s", "must satisfy 0 <= t_onset_s < t_max_s"));
        }
        if self.t_max_s / self.dt_s > 1e7 {
            return Err(Error::invalid("scenario.t_max_s", "horizon has too many steps"));
        }
        Ok(())
    }

    /// Number of grid points `t_k = k dt` for `k = 0..=t_max / dt`.
    pub fn n_steps(&self) -> usize {
        (self.t_max_s / self.dt_s + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub markers: MarkerModel,
    pub strategy: StrategyConfig,
    pub channel: ChannelConfig,
    pub gateway: GatewayConfig,
    pub calibration: CalibrationConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.markers.validate()?;
        self.strategy.validate()?;
        self.channel.validate()?;
        self.gateway.validate()?;
        self.calibration.validate()?;
        self.sweep.validate()?;
        Ok(())
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads, parses and validates the config file at `path`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })?;
    ExperimentConfig::from_json(&text)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_json()).map_err(|source| Error::Write {
        path: PathBuf::from(path),
        source,
    })
}
