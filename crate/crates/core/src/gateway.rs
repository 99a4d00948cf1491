//! Leaky evidence integration and threshold detection at the gateway.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub tau_gw_s: f64,
    /// Detection threshold; normally set by calibration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_gateway: Option<f64>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            tau_gw_s: 20.0,
            theta_gateway: None,
        }
    }
}

impl GatewayConfig {
    /// Per-step retention factor `exp(-dt / tau)`.
    pub fn beta(&self, dt: f64) -> f64 {
        (-dt / self.tau_gw_s).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_gw_s > 0.0 && self.tau_gw_s.is_finite()) {
            return Err(Error::invalid("gateway.tau_gw_s", "must be positive"));
        }
        if let Some(theta) = self.theta_gateway {
            if theta.is_nan() || theta < 0.0 {
                return Err(Error::invalid("gateway.theta_gateway", "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn update_evidence(a_prev: f64, e_k: f64, beta: f64) -> f64 {
    beta * a_prev + e_k
}

/// Runs the leaky recursion over a per-step evidence series, starting from
/// `A_0 = 0` before the first input.
pub fn integrate(evidence: &[f64], beta: f64) -> Vec<f64> {
    let mut a = 0.0;
    evidence
        .iter()
        .map(|&e| {
            a = update_evidence(a, e, beta);
            a
        })
        .collect()
}

/// First grid time `t_k = k dt` inside `[t_start, t_end]` with `A_k > theta`.
pub fn detect(
    series: &[f64],
    dt: f64,
    theta: f64,
    window: (f64, f64),
) -> Option<f64> {
    let (t_start, t_end) = window;
    series
        .iter()
        .enumerate()
        .map(|(k, &a)| (k as f64 * dt, a))
        .skip_while(|&(t, _)| t < t_start - 1e-9)
        .take_while(|&(t, _)| t <= t_end + 1e-9)
        .find(|&(_, a)| a > theta)
        .map(|(t, _)| t)
}
