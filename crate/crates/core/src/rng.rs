//! Deterministic sub-seeding. Every stochastic stage draws from a stream keyed
//! by `(global seed, entity id, stage name)` so results never depend on
//! evaluation order or thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit sub-seed for `(seed, id, stage)`.
pub fn derive_seed(seed: u64, id: &str, stage: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, id.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, stage.as_bytes());
    splitmix(h)
}

pub fn stage_rng(seed: u64, id: &str, stage: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, id, stage))
}
