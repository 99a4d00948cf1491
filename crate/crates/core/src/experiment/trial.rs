use std::sync::Arc;

use crate::channel::KernelTable;
use crate::config::{ExperimentConfig, Hypothesis, Placement};
use crate::error::Result;
use crate::gateway;
use crate::markers::{self, MarkerField};
use crate::node::{local_condition, DecisionRule, EmissionEvent, NodeState, StrategyConfig, StrategyKind};
use crate::rng::{MasterSeed, StreamDomain};

/// Everything a trial needs that is shared across trials of one batch.
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub config: ExperimentConfig,
    pub strategy: StrategyConfig,
    pub rule: DecisionRule,
    /// `None` while calibrating the gateway: trials then report no detection.
    pub theta_gateway: Option<f64>,
    pub seed: MasterSeed,
    pub keep_traces: bool,
    /// Kernel for the deterministic placement; random placement builds one
    /// per trial.
    kernel: Option<Arc<KernelTable>>,
}

impl TrialContext {
    pub fn new(
        config: &ExperimentConfig,
        strategy: StrategyConfig,
        theta_gateway: Option<f64>,
        seed: MasterSeed,
    ) -> Result<Self> {
        let rule = strategy.rule()?;
        let kernel = match config.scenario.placement {
            Placement::Midcell => {
                let xs = markers::node_positions(&config.scenario);
                Some(Arc::new(build_kernel(config, &xs)))
            }
            Placement::Random => None,
        };
        Ok(TrialContext {
            config: config.clone(),
            strategy,
            rule,
            theta_gateway,
            seed,
            keep_traces: false,
            kernel,
        })
    }

    pub fn with_traces(mut self, keep: bool) -> Self {
        self.keep_traces = keep;
        self
    }

    pub fn kind(&self) -> StrategyKind {
        self.strategy.kind
    }
}

fn build_kernel(config: &ExperimentConfig, positions: &[f64]) -> KernelTable {
    let distances: Vec<f64> = positions
        .iter()
        .map(|x| (x - config.scenario.gateway_pos_um).abs())
        .collect();
    KernelTable::new(
        &distances,
        &config.channel,
        config.scenario.dt_s,
        config.scenario.n_steps(),
    )
}

/// Local ON/OFF activity of one trial, summed over nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalSummary {
    pub node_steps: u64,
    pub on_steps: u64,
    pub rising_edges: u64,
    /// Node-steps where the instantaneous (hysteresis-free) condition held.
    pub raw_positive_steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial_index: u32,
    pub seed: MasterSeed,
    pub hypothesis: Hypothesis,
    pub strategy: StrategyKind,
    pub n_nodes: usize,
    pub dt_s: f64,
    /// Realized emissions sorted by release time.
    pub emissions: Vec<EmissionEvent>,
    /// Gateway evidence `A_k` for `k = 0..n_steps`.
    pub evidence: Vec<f64>,
    pub detection_time_s: Option<f64>,
    pub local: LocalSummary,
    /// `states[k][i]`: node `i` ON at step `k`. Only kept on request.
    pub states: Option<Vec<Vec<bool>>>,
}

impl TrialRecord {
    pub fn max_evidence(&self) -> f64 {
        self.evidence.iter().copied().fold(0.0, f64::max)
    }

    /// Emissions released inside `[from, to]`.
    pub fn emissions_in(&self, from: f64, to: f64) -> usize {
        self.emissions
            .iter()
            .filter(|e| e.emit_time_s >= from - 1e-9 && e.emit_time_s <= to + 1e-9)
            .count()
    }
}

fn domain_for(h: Hypothesis) -> StreamDomain {
    match h {
        Hypothesis::H0 => StreamDomain::EvalH0,
        Hypothesis::H1 => StreamDomain::EvalH1,
    }
}

/// Runs one evaluation trial in the evaluation stream domain of `hypothesis`.
pub fn run_trial(ctx: &TrialContext, hypothesis: Hypothesis, trial_index: u32) -> TrialRecord {
    run_trial_in(ctx, hypothesis, trial_index, domain_for(hypothesis))
}

/// Runs one H0 trial in the gateway-calibration stream domain.
pub(crate) fn run_trial_calibration(ctx: &TrialContext, trial_index: u32) -> TrialRecord {
    run_trial_in(ctx, Hypothesis::H0, trial_index, StreamDomain::GatewayCalibration)
}

/// Runs one trial drawing its randomness from `domain`.
pub(crate) fn run_trial_in(
    ctx: &TrialContext,
    hypothesis: Hypothesis,
    trial_index: u32,
    domain: StreamDomain,
) -> TrialRecord {
    let mut scenario = ctx.config.scenario.clone();
    scenario.hypothesis = hypothesis;
    let dt = scenario.dt_s;
    let n_steps = scenario.n_steps();
    let t_max = scenario.t_max_s;

    let positions = markers::positions_for_trial(&scenario, ctx.seed, trial_index);
    let owned_kernel;
    let kernel = match &ctx.kernel {
        Some(k) => k.as_ref(),
        None => {
            owned_kernel = build_kernel(&ctx.config, &positions);
            &owned_kernel
        }
    };

    let mut field = MarkerField::new(
        &scenario,
        &ctx.config.markers,
        &positions,
        ctx.seed,
        domain,
        trial_index,
    );
    let mut nodes: Vec<NodeState> = positions
        .iter()
        .enumerate()
        .map(|(i, x)| NodeState::new(i, (x - scenario.gateway_pos_um).abs()))
        .collect();

    let beta = ctx.config.gateway.beta(dt);
    let mut arrivals = vec![0.0; n_steps];
    let mut evidence = Vec::with_capacity(n_steps);
    let mut emissions = Vec::new();
    let mut local = LocalSummary::default();
    let mut states = ctx.keep_traces.then(|| Vec::with_capacity(n_steps));
    let mut a = 0.0;

    for k in 0..n_steps {
        let t = k as f64 * dt;
        if k > 0 {
            field.advance(t);
        }
        let values = field.values();
        let mut row = states.as_ref().map(|_| Vec::with_capacity(nodes.len()));
        for (node, x) in nodes.iter_mut().zip(values) {
            if local_condition(&ctx.rule, x) {
                local.raw_positive_steps += 1;
            }
            if node.advance(&ctx.rule, x) {
                local.rising_edges += 1;
                node.schedule_emission(t, &ctx.strategy, t_max);
            }
            if node.is_on() {
                local.on_steps += 1;
            }
            if let Some(row) = row.as_mut() {
                row.push(node.is_on());
            }
            let (index, distance_um) = (node.index, node.distance_um);
            for emit_time_s in node.realize_due(t) {
                let e = EmissionEvent {
                    node_index: index,
                    emit_time_s,
                    distance_um,
                    molecules: ctx.strategy.molecules_per_alarm,
                };
                kernel.scatter(&e, &mut arrivals);
                emissions.push(e);
            }
        }
        local.node_steps += nodes.len() as u64;
        if let (Some(states), Some(row)) = (states.as_mut(), row) {
            states.push(row);
        }
        a = gateway::update_evidence(a, arrivals[k], beta);
        evidence.push(a);
    }
    emissions.sort_by(|x: &EmissionEvent, y| x.emit_time_s.total_cmp(&y.emit_time_s));

    let window = match hypothesis {
        Hypothesis::H0 => (0.0, t_max),
        Hypothesis::H1 => (scenario.t_onset_s, t_max),
    };
    let detection_time_s = ctx
        .theta_gateway
        .and_then(|theta| gateway::detect(&evidence, dt, theta, window));

    TrialRecord {
        trial_index,
        seed: ctx.seed,
        hypothesis,
        strategy: ctx.strategy.kind,
        n_nodes: nodes.len(),
        dt_s: dt,
        emissions,
        evidence,
        detection_time_s,
        local,
        states,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::impulse_response;
    use approx::assert_relative_eq;

    fn tr_context(cfg: &ExperimentConfig, thr: f64, theta_gw: Option<f64>) -> TrialContext {
        let strategy = StrategyConfig {
            thr_1: Some(thr),
            ..cfg.strategy.for_kind(StrategyKind::Tr)
        };
        TrialContext::new(cfg, strategy, theta_gw, MasterSeed(5)).unwrap()
    }

    #[test]
    fn infinite_thresholds_silence_everything() {
        let cfg = ExperimentConfig::default();
        let ctx = tr_context(&cfg, f64::INFINITY, Some(1e-9));
        for h in [Hypothesis::H0, Hypothesis::H1] {
            let rec = run_trial(&ctx, h, 0);
            assert!(rec.emissions.is_empty());
            assert!(rec.evidence.iter().all(|&a| a == 0.0));
            assert_eq!(rec.detection_time_s, None);
            assert_eq!(rec.local.rising_edges, 0);
        }
    }

    #[test]
    fn single_forced_emission_matches_scalar_recomputation() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.n_nodes = 1;
        // every value exceeds the threshold: one edge at t = 0, then stays ON
        let ctx = tr_context(&cfg, -1.0, None);
        let rec = run_trial(&ctx, Hypothesis::H0, 0);
        assert_eq!(rec.emissions.len(), 1);
        assert_eq!(rec.emissions[0].emit_time_s, 0.0);
        assert_eq!(rec.emissions[0].distance_um, 500.0);

        let beta = (-1.0f64 / 20.0).exp();
        for (k, &a) in rec.evidence.iter().enumerate() {
            let mut expected = 0.0;
            for j in 1..=k {
                expected += beta.powi((k - j) as i32) * 50.0 * impulse_response(500.0, j as f64, &cfg.channel);
            }
            assert_relative_eq!(a, expected, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn repeatable() {
        let cfg = ExperimentConfig::default();
        let ctx = tr_context(&cfg, 0.4, Some(1.0)).with_traces(true);
        let a = run_trial(&ctx, Hypothesis::H1, 17);
        let b = run_trial(&ctx, Hypothesis::H1, 17);
        assert_eq!(a.emissions, b.emissions);
        assert_eq!(a.evidence, b.evidence);
        assert_eq!(a.detection_time_s, b.detection_time_s);
        assert_eq!(a.local, b.local);
        assert_eq!(a.states, b.states);
        let c = run_trial(&ctx, Hypothesis::H1, 18);
        assert_ne!(a.evidence, c.evidence);
    }

    #[test]
    fn refractory_holds_in_simulated_traces() {
        let mut cfg = ExperimentConfig::default();
        cfg.strategy.delta_thr = 0.0;
        let ctx = tr_context(&cfg, 0.3, None);
        for trial in 0..5 {
            let rec = run_trial(&ctx, Hypothesis::H1, trial);
            let mut by_node = vec![Vec::new(); 50];
            for e in &rec.emissions {
                by_node[e.node_index].push(e.emit_time_s);
            }
            for times in by_node {
                assert!(times.windows(2).all(|w| w[1] - w[0] >= 10.0 - 1e-9));
            }
        }
    }

    #[test]
    fn detection_lies_on_grid_inside_window() {
        let cfg = ExperimentConfig::default();
        let ctx = tr_context(&cfg, 0.3, Some(0.5));
        for trial in 0..10 {
            let rec = run_trial(&ctx, Hypothesis::H1, trial);
            if let Some(t) = rec.detection_time_s {
                assert!((30.0..=300.0).contains(&t));
                assert_eq!(t, t.round());
            }
        }
    }

    #[test]
    fn random_placement_runs() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.placement = Placement::Random;
        cfg.strategy.t_sense_s = 0.5;
        let ctx = tr_context(&cfg, 0.4, None);
        let rec = run_trial(&ctx, Hypothesis::H0, 2);
        assert!(!rec.emissions.is_empty());
        assert!(rec.emissions.iter().all(|e| e.emit_time_s.fract() == 0.5));
        assert!(rec.evidence.iter().all(|a| a.is_finite() && *a >= 0.0));
    }
}
