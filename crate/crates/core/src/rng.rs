//! Counter-based random substreams.
//!
//! Every random decision in a chain draws from a ChaCha stream keyed by
//! `(seed, iteration, purpose, index)`, so the values consumed by one cell or
//! gene never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a substream is used for; part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Experiment = 1,
    GenePhase = 2,
    Cell = 3,
    Gauge = 4,
    MipsPhase = 5,
    MipsTrend = 6,
    MipsDamping = 7,
    MipsDampingGene = 8,
    Init = 9,
    Permutation = 10,
    Simulation = 11,
}

pub fn substream(seed: u64, iteration: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[24..].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
