//! Marker concentration traces.
//!
//! Each node senses two markers. Marker values follow a mean-tracking AR(1)
//! recursion whose innovation is scaled by `sqrt(1 - alpha^2)`, so the
//! stationary variance of the pre-clamp process is `sigma^2` whatever the
//! correlation. Reported concentrations are clamped at zero; the clamp is
//! applied to the output only and never fed back into the recursion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{Hypothesis, Placement, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rng::{self, MasterSeed, StreamDomain};

pub const N_MARKERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerModel {
    /// Baseline mean per marker.
    pub mu0: [f64; N_MARKERS],
    /// Stationary noise standard deviation per marker.
    pub sigma: [f64; N_MARKERS],
    /// Anomaly amplitude at the source per marker.
    pub a: [f64; N_MARKERS],
    /// Spatial decay length of the anomaly signature per marker (um).
    pub lambda_spatial: [f64; N_MARKERS],
    /// Temporal correlation factor shared by both markers.
    pub alpha: f64,
}

impl Default for MarkerModel {
    fn default() -> Self {
        MarkerModel {
            mu0: [0.20, 0.10],
            sigma: [0.16, 0.05],
            a: [0.30, 0.12],
            lambda_spatial: [250.0, 200.0],
            alpha: 0.85,
        }
    }
}

impl MarkerModel {
    pub fn validate(&self) -> Result<()> {
        for j in 0..N_MARKERS {
            if !(self.sigma[j] > 0.0 && self.sigma[j].is_finite()) {
                return Err(Error::invalid("markers.sigma", "must be positive"));
            }
            if self.lambda_spatial[j].is_nan() || self.lambda_spatial[j] <= 0.0 {
                return Err(Error::invalid("markers.lambda_spatial", "must be positive"));
            }
            if !(self.a[j] >= 0.0 && self.a[j].is_finite()) {
                return Err(Error::invalid("markers.a", "must be non-negative"));
            }
            if !self.mu0[j].is_finite() {
                return Err(Error::invalid("markers.mu0", "must be finite"));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("markers.alpha", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean concentration of marker `marker` at `node_pos_um` and time `t_s`.
///
/// Under H1 the anomaly switches on as a step at the onset time and decays
/// exponentially with distance from the anomaly source.
pub fn anomaly_mean(
    node_pos_um: f64,
    marker: usize,
    t_s: f64,
    scenario: &ScenarioConfig,
    model: &MarkerModel,
) -> f64 {
    let base = model.mu0[marker];
    if scenario.hypothesis == Hypothesis::H0 || t_s < scenario.t_onset_s {
        return base;
    }
    let dist = (node_pos_um - scenario.anomaly_pos_um).abs();
    base + model.a[marker] * (-dist / model.lambda_spatial[marker]).exp()
}

/// One step of the mean-tracking AR(1) recursion.
///
/// Returns `(pre_clamp, clamped)`.
#[inline]
pub fn step_marker(
    prev_pre_clamp: f64,
    mu_prev: f64,
    mu_now: f64,
    sigma: f64,
    alpha: f64,
    noise: f64,
) -> (f64, f64) {
    let pre = mu_now + alpha * (prev_pre_clamp - mu_prev) + (1.0 - alpha * alpha).sqrt() * sigma * noise;
    (pre, pre.max(0.0))
}

/// Deterministic mid-cell placement `x_i = (i + 0.5) L / N`.
pub fn node_positions(scenario: &ScenarioConfig) -> Vec<f64> {
    let n = scenario.n_nodes;
    let cell = scenario.length_um / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * cell).collect()
}

/// Placement for one trial, honouring the configured placement rule.
pub fn positions_for_trial(
    scenario: &ScenarioConfig,
    seed: MasterSeed,
    trial: u32,
) -> Vec<f64> {
    match scenario.placement {
        Placement::Midcell => node_positions(scenario),
        Placement::Random => {
            let mut rng = rng::stream(seed, StreamDomain::Placement, trial, 0, 0);
            let mut xs: Vec<f64> = (0..scenario.n_nodes)
                .map(|_| {
                    // open interval (0, L)
                    let u: f64 = rng.random();
                    (u.max(f64::MIN_POSITIVE)) * scenario.length_um
                })
                .collect();
            xs.sort_by(f64::total_cmp);
            xs
        }
    }
}

/// Per-trial marker generator for every node.
///
/// Holds the pre-clamp AR state and one random stream per `(node, marker)`.
pub struct MarkerField {
    rngs: Vec<[ChaCha8Rng; N_MARKERS]>,
    pre: Vec<[f64; N_MARKERS]>,
    clamped: Vec<[f64; N_MARKERS]>,
    /// Mean of each node before onset and after onset.
    mean_before: [f64; N_MARKERS],
    mean_after: Vec<[f64; N_MARKERS]>,
    sigma: [f64; N_MARKERS],
    alpha: f64,
    onset_s: f64,
    last_t: f64,
}

impl MarkerField {
    /// Creates the field and draws the initial state at `t = 0` from the
    /// stationary law `N(mu(0), sigma^2)`.
    pub fn new(
        scenario: &ScenarioConfig,
        model: &MarkerModel,
        positions: &[f64],
        seed: MasterSeed,
        domain: StreamDomain,
        trial: u32,
    ) -> Self {
        let mean_after: Vec<[f64; N_MARKERS]> = positions
            .iter()
            .map(|&x| {
                let mut mu = [0.0; N_MARKERS];
                for (j, m) in mu.iter_mut().enumerate() {
                    *m = anomaly_mean(x, j, f64::INFINITY, scenario, model);
                }
                mu
            })
            .collect();
        let mut field = MarkerField {
            rngs: (0..positions.len())
                .map(|i| {
                    [
                        rng::stream(seed, domain, trial, i as u32, 0),
                        rng::stream(seed, domain, trial, i as u32, 1),
                    ]
                })
                .collect(),
            pre: vec![[0.0; N_MARKERS]; positions.len()],
            clamped: vec![[0.0; N_MARKERS]; positions.len()],
            mean_before: model.mu0,
            mean_after,
            sigma: model.sigma,
            alpha: model.alpha,
            onset_s: scenario.t_onset_s,
            last_t: 0.0,
        };
        for i in 0..positions.len() {
            let mu = field.mean(i, 0.0);
            for (j, m) in mu.iter().enumerate() {
                let xi: f64 = field.rngs[i][j].sample(StandardNormal);
                let pre = m + field.sigma[j] * xi;
                field.pre[i][j] = pre;
                field.clamped[i][j] = pre.max(0.0);
            }
        }
        field
    }

    #[inline]
    fn mean(&self, node: usize, t: f64) -> [f64; N_MARKERS] {
        if t < self.onset_s {
            self.mean_before
        } else {
            self.mean_after[node]
        }
    }

    /// Advances every node to time `t_s`.
    pub fn advance(&mut self, t_s: f64) {
        let t_prev = self.last_t;
        for i in 0..self.pre.len() {
            let mu_prev = self.mean(i, t_prev);
            let mu_now = self.mean(i, t_s);
            for j in 0..N_MARKERS {
                let xi: f64 = self.rngs[i][j].sample(StandardNormal);
                let (pre, out) =
                    step_marker(self.pre[i][j], mu_prev[j], mu_now[j], self.sigma[j], self.alpha, xi);
                self.pre[i][j] = pre;
                self.clamped[i][j] = out;
            }
        }
        self.last_t = t_s;
    }

    /// Clamped concentrations at the current time.
    pub fn values(&self) -> &[[f64; N_MARKERS]] {
        &self.clamped
    }

    /// Pre-clamp state at the current time.
    pub fn pre_clamp(&self) -> &[[f64; N_MARKERS]] {
        &self.pre
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h1() -> ScenarioConfig {
        ScenarioConfig {
            hypothesis: Hypothesis::H1,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn h0_mean_is_baseline() {
        let s = ScenarioConfig::default();
        let m = MarkerModel::default();
        for pos in [0.0, 250.0, 750.0, 1000.0] {
            assert_eq!(anomaly_mean(pos, 0, 100.0, &s, &m), 0.20);
            assert_eq!(anomaly_mean(pos, 1, 100.0, &s, &m), 0.10);
        }
    }

    #[test]
    fn h1_mean_at_source_and_one_decay_length() {
        let s = h1();
        let m = MarkerModel::default();
        assert_abs_diff_eq!(anomaly_mean(750.0, 0, 30.0, &s, &m), 0.50, epsilon = 1e-12);
        assert_abs_diff_eq!(anomaly_mean(500.0, 0, 100.0, &s, &m), 0.310364, epsilon = 1e-6);
        assert_abs_diff_eq!(anomaly_mean(1000.0, 0, 100.0, &s, &m), 0.310364, epsilon = 1e-6);
        // before onset
        assert_eq!(anomaly_mean(750.0, 0, 29.999, &s, &m), 0.20);
    }

    #[test]
    fn mean_non_increasing_with_distance() {
        let s = h1();
        let m = MarkerModel::default();
        for j in 0..N_MARKERS {
            let mut last = f64::INFINITY;
            for d in 0..=100 {
                let v = anomaly_mean(750.0 - 7.5 * d as f64, j, 50.0, &s, &m);
                assert!(v <= last);
                last = v;
            }
        }
    }

    #[test]
    fn step_marker_examples() {
        let (pre, _) = step_marker(0.7, 0.3, 0.25, 0.16, 0.0, 0.0);
        assert_eq!(pre, 0.25);
        let (pre, _) = step_marker(0.30, 0.20, 0.20, 0.16, 0.85, 0.0);
        assert_abs_diff_eq!(pre, 0.285, epsilon = 1e-12);
        let (pre, _) = step_marker(0.30, 0.20, 0.20, 0.16, 0.85, 1.0);
        assert_abs_diff_eq!(pre, 0.285 + (1.0f64 - 0.85 * 0.85).sqrt() * 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(pre, 0.36928, epsilon = 1e-5);
        let (pre, out) = step_marker(0.05, 0.05, 0.05, 0.05, 0.0, -3.0);
        assert!(pre < 0.0);
        assert_eq!(out, 0.0);
    }

    #[test]
    fn midcell_placement() {
        let mut s = ScenarioConfig {
            n_nodes: 5,
            ..ScenarioConfig::default()
        };
        assert_eq!(node_positions(&s), vec![100.0, 300.0, 500.0, 700.0, 900.0]);
        s.n_nodes = 1;
        assert_eq!(node_positions(&s), vec![500.0]);
        s.n_nodes = 50;
        let xs = node_positions(&s);
        assert_eq!(xs[0], 10.0);
        assert_abs_diff_eq!(xs[1] - xs[0], 20.0, epsilon = 1e-12);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn random_placement_sorted_inside_segment() {
        let s = ScenarioConfig {
            placement: Placement::Random,
            ..ScenarioConfig::default()
        };
        let xs = positions_for_trial(&s, MasterSeed(1), 4);
        assert_eq!(xs.len(), 50);
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1000.0));
        assert_eq!(xs, positions_for_trial(&s, MasterSeed(1), 4));
    }

    #[test]
    fn ar1_stationary_moments() {
        // one long H0 run of a single node
        let s = ScenarioConfig {
            n_nodes: 1,
            ..ScenarioConfig::default()
        };
        let m = MarkerModel::default();
        let mut field = MarkerField::new(&s, &m, &[500.0], MasterSeed(3), StreamDomain::Verification, 0);
        let steps = 100_000;
        let mut xs = Vec::with_capacity(steps);
        for k in 1..=steps {
            field.advance(k as f64);
            xs.push(field.pre_clamp()[0][0]);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0) / var;
        let sigma = m.sigma[0];
        // effective sample size shrinks by (1 - alpha) / (1 + alpha) under correlation
        let n_eff = n * (1.0 - m.alpha) / (1.0 + m.alpha);
        assert!((mean - 0.20).abs() < 3.0 * sigma / n_eff.sqrt(), "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var ratio {}", var / (sigma * sigma));
        assert!((lag1 - m.alpha).abs() < 0.02, "lag1 {lag1}");
    }

    #[test]
    fn clamped_values_never_negative() {
        let s = ScenarioConfig {
            n_nodes: 10,
            ..ScenarioConfig::default()
        };
        let m = MarkerModel {
            mu0: [0.02, 0.01],
            ..MarkerModel::default()
        };
        let xs = node_positions(&s);
        let mut field = MarkerField::new(&s, &m, &xs, MasterSeed(9), StreamDomain::EvalH0, 2);
        let mut saw_negative_pre = false;
        for k in 1..=2000 {
            field.advance(k as f64);
            for (v, p) in field.values().iter().zip(field.pre_clamp()) {
                assert!(v[0] >= 0.0 && v[1] >= 0.0);
                saw_negative_pre |= p[0] < 0.0;
            }
        }
        assert!(saw_negative_pre);
    }

    #[test]
    fn validation_rejects_bad_alpha() {
        let m = MarkerModel {
            alpha: 1.0,
            ..MarkerModel::default()
        };
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("markers.alpha"));
    }
}
