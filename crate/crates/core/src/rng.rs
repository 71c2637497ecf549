//! Stateless seed derivation.
//!
//! Every random stream in a run (augmentation per sample, drop-path per step,
//! shuffling per epoch) is seeded from the run seed plus its coordinates, so
//! resuming at any step needs no serialized generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep coordinates of different purposes from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    DropPath = 4,
    Generate = 5,
    Flip = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix(base ^ splitmix(stream as u64));
    for &c in coords {
        h = splitmix(h ^ c);
    }
    h
}

pub fn stream_rng(base: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, coords))
}
