//! Seeding scheme. Every pipeline stage draws from its own ChaCha8 stream so
//! stages can run in any order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; one per kind of random operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Source = 1,
    Detector = 2,
    Split = 3,
    Conversion = 4,
    Noise = 5,
}

/// SplitMix64 finaliser applied to `master + index * golden`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}
