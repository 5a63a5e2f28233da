//! Deterministic seed fan-out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a stage name into a parent seed (FNV-1a over the name, then a
/// splitmix64 finalizer).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(seed ^ h)
}

/// Seed for the `index`-th item of a stage, e.g. one patient or one fold.
pub fn derive_indexed(seed: u64, stage: &str, index: u64) -> u64 {
    splitmix(derive_seed(seed, stage) ^ splitmix(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stage))
}
