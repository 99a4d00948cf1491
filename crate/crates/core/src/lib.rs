//! Monte Carlo simulator for alarm reporting in an in-body molecular
//! nanonetwork.
//!
//! Nanonodes along a one-dimensional vessel sense two correlated biochemical
//! markers and report alarms to a boundary gateway by releasing molecules.
//! Three reporting strategies are compared:
//!
//! - raw reporting ([`StrategyKind::Rr`]): alarm when either marker crosses its
//!   own threshold,
//! - threshold reporting ([`StrategyKind::Tr`]): alarm on marker 1 only,
//! - embedded inference ([`StrategyKind::Eir`]): alarm on a weighted score
//!   combined with a marker-2 specificity gate, after an inference delay.
//!
//! Released molecules diffuse to the gateway ([`channel`]), which integrates
//! them in a leaky accumulator ([`gateway`]) and declares detection on a
//! threshold crossing. Thresholds are set by H0 Monte Carlo calibration
//! ([`calibration`]) and the [`experiment`] module runs seeded trials and
//! parameter sweeps.

pub mod calibration;
pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gateway;
pub mod markers;
pub mod node;
pub mod output;
pub mod rng;
pub mod trace;

pub use config::{ExperimentConfig, Hypothesis, ScenarioConfig};
pub use error::{Error, Result};
pub use node::StrategyKind;
pub use rng::MasterSeed;
