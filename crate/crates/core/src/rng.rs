//! Counter-based seed derivation.
//!
//! Every random draw in the toolkit is keyed by the base seed plus the
//! provenance of the draw (image, pair, order, context). A worker can then
//! build its own generator without sharing state, and results do not depend
//! on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

/// Generator for the stream identified by `path` under `base`.
pub fn stream_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags, so that different consumers of one seed never collide.
pub mod tag {
    pub const CONTEXT: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const IMAGES: u64 = 3;
    pub const PERMUTATION: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const WEIGHTS: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const TABLE: u64 = 8;
}
