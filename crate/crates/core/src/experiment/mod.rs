//! Seeded Monte Carlo trials, metrics and parameter sweeps.

mod metrics;
mod sweep;
mod trial;

pub use metrics::{aggregate_metrics, local_state_stats, LocalStats, MetricsRow};
pub use sweep::{
    calibrate_point, run_batch, run_point, run_sweep, BatchOutput, PointSpec, RunOptions, SweepAxis,
    SweepConfig, ANOMALY_COUPLING,
};
pub use trial::{run_trial, LocalSummary, TrialContext, TrialRecord};
pub(crate) use trial::run_trial_calibration;
