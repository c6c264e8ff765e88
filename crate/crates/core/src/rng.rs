//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 generator keyed by a
//! user seed and selected by a 64-bit stream id, so ensemble members can be
//! generated in any order and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for inside one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    LogVolatility,
    Innovations,
}

/// Stream id for member `index` of an ensemble and the given purpose.
pub fn stream_id(index: u64, purpose: Purpose) -> u64 {
    let lane = match purpose {
        Purpose::LogVolatility => 0,
        Purpose::Innovations => 1,
    };
    index.wrapping_mul(2).wrapping_add(lane)
}

pub fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
