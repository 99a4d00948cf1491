//! Diffusive alarm transport from nodes to the gateway.
//!
//! Uses the expected-value channel: one emission of `M` molecules at distance
//! `d` contributes `M * h(d, t) * dt` evidence to the gateway step at elapsed
//! time `t`, and emissions superpose linearly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::EmissionEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub diffusion_um2_s: f64,
    pub drift_um_s: f64,
    pub decay_per_s: f64,
    pub receiver_radius_um: f64,
    /// Regularisation time; defaults to `r^2 / D`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_s: Option<f64>,
    /// Receiver gain; defaults to the aperture `2 r`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_um: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            diffusion_um2_s: 3000.0,
            drift_um_s: 0.0,
            decay_per_s: 0.0,
            receiver_radius_um: 5.0,
            eps_s: None,
            eta_um: None,
        }
    }
}

impl ChannelConfig {
    pub fn eps(&self) -> f64 {
        self.eps_s
            .unwrap_or(self.receiver_radius_um * self.receiver_radius_um / self.diffusion_um2_s)
    }

    pub fn eta(&self) -> f64 {
        self.eta_um.unwrap_or(2.0 * self.receiver_radius_um)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be positive"))
            }
        };
        positive(self.diffusion_um2_s, "channel.diffusion_um2_s")?;
        positive(self.receiver_radius_um, "channel.receiver_radius_um")?;
        positive(self.eps(), "channel.eps_s")?;
        positive(self.eta(), "channel.eta_um")?;
        if !self.drift_um_s.is_finite() {
            return Err(Error::invalid("channel.drift_um_s", "must be finite"));
        }
        if !(self.decay_per_s >= 0.0 && self.decay_per_s.is_finite()) {
            return Err(Error::invalid("channel.decay_per_s", "must be non-negative"));
        }
        Ok(())
    }
}

/// Observed-fraction rate at the gateway, `t` seconds after a release at
/// distance `d_um`.
///
/// Only defined for `t > 0`; callers must drop non-causal terms.
#[inline]
pub fn impulse_response(d_um: f64, t: f64, ch: &ChannelConfig) -> f64 {
    debug_assert!(t > 0.0, "impulse response evaluated at t = {t}");
    let spread = 4.0 * ch.diffusion_um2_s * (t + ch.eps());
    let offset = d_um - ch.drift_um_s * t;
    ch.eta() / (PI * spread).sqrt() * (-offset * offset / spread).exp() * (-ch.decay_per_s * t).exp()
}

/// Evidence arriving in the step ending at `t_k`.
///
/// Emissions at or after `t_k` contribute nothing.
pub fn evidence_at(t_k: f64, emissions: &[EmissionEvent], ch: &ChannelConfig, dt: f64) -> f64 {
    emissions
        .iter()
        .filter(|e| e.emit_time_s < t_k)
        .map(|e| e.molecules * impulse_response(e.distance_um, t_k - e.emit_time_s, ch) * dt)
        .sum()
}

/// Per-node impulse responses sampled on the step grid.
///
/// An emission scatters its whole future contribution onto a per-step
/// evidence buffer. Lags that fall on the grid are read from the table and
/// off-grid lags are evaluated directly, so both paths give the same terms as
/// [`evidence_at`].
#[derive(Debug, Clone)]
pub struct KernelTable {
    dt: f64,
    n_steps: usize,
    /// `rows[node][m] = h(d_node, m dt)` for `m >= 1`.
    rows: Vec<Vec<f64>>,
    channel: ChannelConfig,
}

impl KernelTable {
    /// `n_steps` is the number of grid points `t_k = k dt`, `k = 0..n_steps`.
    pub fn new(distances: &[f64], ch: &ChannelConfig, dt: f64, n_steps: usize) -> Self {
        let rows = distances
            .iter()
            .map(|&d| {
                let mut row = vec![0.0; n_steps];
                for (m, h) in row.iter_mut().enumerate().skip(1) {
                    *h = impulse_response(d, m as f64 * dt, ch);
                }
                row
            })
            .collect();
        KernelTable {
            dt,
            n_steps,
            rows,
            channel: ch.clone(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Adds the contribution of `e` to every later step of `evidence`.
    pub fn scatter(&self, e: &EmissionEvent, evidence: &mut [f64]) {
        debug_assert_eq!(evidence.len(), self.n_steps);
        let pos = e.emit_time_s / self.dt;
        let scale = e.molecules * self.dt;
        if (pos - pos.round()).abs() < 1e-9 {
            let k_e = pos.round() as usize;
            let row = &self.rows[e.node_index];
            for k in (k_e + 1)..self.n_steps {
                evidence[k] += scale * row[k - k_e];
            }
        } else {
            let first = pos.floor() as usize + 1;
            for (k, slot) in evidence.iter_mut().enumerate().skip(first) {
                let lag = k as f64 * self.dt - e.emit_time_s;
                *slot += scale * impulse_response(e.distance_um, lag, &self.channel);
            }
        }
    }
}
