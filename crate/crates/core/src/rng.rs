//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha20 stream keyed by the
//! user seed and selected by a `(purpose, index)` pair, so that projection
//! banks, phases, splits and augmentation noise never share a stream and
//! results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The generator used throughout the crate.
pub type Stream = ChaCha20Rng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Projection = 1,
    Phase = 2,
    Split = 3,
    Augment = 4,
    VisitOrder = 5,
    PairSample = 6,
    BlockSeed = 7,
    Stage = 8,
    Term = 9,
}

/// Opens the stream for `(seed, purpose, index)`.
///
/// `index` must fit in 56 bits; the purpose tag occupies the top byte of
/// the ChaCha stream id.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Stream {
    debug_assert!(index < (1 << 56));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// SplitMix64 finalizer. A bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child `index` under `parent`.
///
/// For a fixed parent, distinct indices always give distinct child seeds.
pub fn derive_seed(parent: u64, purpose: Purpose, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let base = mix64(parent ^ ((purpose as u64) << 56));
    mix64(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}
