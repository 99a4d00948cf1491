//! Seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose key is derived
//! from the master seed and a [`StreamDomain`] tag, and whose stream id encodes
//! `(trial, node, marker)`. A stream therefore depends only on its coordinates,
//! never on how many other streams exist or on the order in which trials are
//! executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed used when neither `--seed`, the config file, nor `NANOSIM_SEED` gives one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MasterSeed(pub u64);

impl Default for MasterSeed {
    fn default() -> Self {
        MasterSeed(DEFAULT_SEED)
    }
}

/// Separates the random streams used for different purposes so that, for
/// example, calibration never reuses the marker noise of evaluation trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamDomain {
    /// Long H0 marker runs used to set local thresholds.
    LocalCalibration,
    /// End-to-end H0 trials used to set the gateway threshold.
    GatewayCalibration,
    /// Evaluation trials under H0.
    EvalH0,
    /// Evaluation trials under H1.
    EvalH1,
    /// Fresh H0 marker runs for closed-loop checks of local calibration.
    Verification,
    /// Random node placement.
    Placement,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::LocalCalibration => 0x6c6f_6361_6c5f_6361,
            StreamDomain::GatewayCalibration => 0x6777_5f63_616c_6962,
            StreamDomain::EvalH0 => 0x6576_616c_5f68_3030,
            StreamDomain::EvalH1 => 0x6576_616c_5f68_3031,
            StreamDomain::Verification => 0x7665_7269_6679_5f30,
            StreamDomain::Placement => 0x706c_6163_656d_656e,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn domain_key(seed: MasterSeed, domain: StreamDomain) -> [u8; 32] {
    let mut state = seed.0 ^ domain.tag();
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Stream for one `(trial, node, marker)` coordinate.
///
/// Node indices must fit in 24 bits and marker indices in 8 bits.
pub fn stream(
    seed: MasterSeed,
    domain: StreamDomain,
    trial: u32,
    node: u32,
    marker: u8,
) -> ChaCha8Rng {
    debug_assert!(node < (1 << 24));
    let mut rng = ChaCha8Rng::from_seed(domain_key(seed, domain));
    let id = (u64::from(trial) << 32) | (u64::from(node) << 8) | u64::from(marker);
    rng.set_stream(id);
    rng
}
