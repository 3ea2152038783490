//! Named, reproducible random streams derived from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable across platforms and releases; do not replace with `Hash`.
pub fn derive_seed(seed: u64, path: &[&str]) -> u64 {
    let mut h = splitmix(seed);
    for part in path {
        for b in part.bytes() {
            h = splitmix(h ^ u64::from(b));
        }
        h = splitmix(h ^ 0xFF);
    }
    h
}

pub fn stream(seed: u64, path: &[&str]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream keyed additionally by a counter, e.g. a training step.
pub fn indexed_stream(seed: u64, path: &[&str], index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix(derive_seed(seed, path) ^ splitmix(index)))
}
