//! Seed derivation. Every stochastic stage draws from its own stream derived
//! from one root seed, so stages stay reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Mask,
    Shuffle,
    Dropout,
    KMeans,
    Synthetic,
    Pca,
    Landmarks,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Init => 0x494e_4954,
            Stage::Mask => 0x4d41_534b,
            Stage::Shuffle => 0x5348_5546,
            Stage::Dropout => 0x4452_4f50,
            Stage::KMeans => 0x4b4d_4e53,
            Stage::Synthetic => 0x5359_4e54,
            Stage::Pca => 0x5043_4130,
            Stage::Landmarks => 0x4c4d_524b,
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stage_seed(root: u64, stage: Stage) -> u64 {
    mix(mix(root) ^ stage.tag())
}

pub fn stage_rng(root: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(root, stage))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
