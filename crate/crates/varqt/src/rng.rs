//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha stream selected by `(seed, name)`, so
//! adding a new consumer never shifts the numbers seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream names used by the library.
pub mod streams {
    pub const SPSA_GRAD: &str = "spsa.grad";
    pub const SPSA_QGT: &str = "spsa.qgt";
    pub const SHOTS: &str = "shots";
    pub const TWODESIGN_AXES: &str = "twodesign.axes";
    pub const QMETTS: &str = "qmetts";
    pub const INIT: &str = "init";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for the named stream of `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Generator for sample `index` of the named stream; used to fan work out
/// over threads without losing determinism.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix(seed ^ splitmix(index.wrapping_add(1))));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Derives a child seed, e.g. one per repetition of an experiment.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed.wrapping_add(splitmix(index)))
}
