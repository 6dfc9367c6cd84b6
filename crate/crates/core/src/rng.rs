//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream)`; streams
//! with different ids never overlap, so replicate `k` of a simulation draws
//! from stream `k` regardless of how replicates are split across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::special::normal_quantile;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1) with 53 random bits.
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal variate by inversion.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    normal_quantile(open_unit(rng))
}
