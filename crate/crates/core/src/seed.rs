//! Seed derivation.
//!
//! Every random stream in an experiment is derived from a single master seed
//! through [`child_seed`], keyed by a purpose tag and an index, so that data
//! generation, initialization and control never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used everywhere in the crate. ChaCha output is
/// specified independently of platform, which keeps trajectories replayable.
pub type SimRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from `(master, tag, index)`.
pub fn child_seed(master: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a(tag.as_bytes()));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, tag: &str, index: u64) -> SimRng {
    rng_from_seed(child_seed(master, tag, index))
}
