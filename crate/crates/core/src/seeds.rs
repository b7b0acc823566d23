//! Derivation of independent random streams from one user seed.
//!
//! Every consumer gets `ChaCha8Rng::seed_from_u64(seed)` moved to its own
//! stream with `set_stream`, so streams never overlap and adding a consumer
//! does not shift the numbers drawn by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Entity shuffle for train/validation/test splitting.
    Split,
    /// Parameter initialisation.
    Init,
    /// Minibatch order in epoch `e`.
    Shuffle(u32),
    /// Corruption draws in epoch `e`.
    Corruption(u32),
    /// Simulated entity `i`.
    Entity(u32),
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Split => 1,
            Stream::Init => 2,
            Stream::Shuffle(e) => (1 << 20) + e as u64,
            Stream::Corruption(e) => (2 << 20) + e as u64,
            Stream::Entity(i) => (1 << 32) + i as u64,
        }
    }
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream.id());
    r
}
