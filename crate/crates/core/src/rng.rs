//! Seeded, splittable randomness.
//!
//! A [`RandomSource`] names a ChaCha8 keystream by `(seed, stream)`. Each
//! stream is further cut into 256 lanes of 2^60 words, so one trial can hand
//! disjoint generators to population synthesis and to every estimator without
//! coordinating draw counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type produced by [`RandomSource`].
pub type Stream = ChaCha8Rng;

const LANE_SHIFT: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    lane: u8,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            lane: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Same key and stream, positioned at the start of `lane`.
    pub fn lane(&self, lane: u8) -> Self {
        Self { lane, ..*self }
    }

    /// Fresh generator positioned at the start of this source's lane.
    pub fn rng(&self) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(self.lane) << LANE_SHIFT);
        rng
    }
}
