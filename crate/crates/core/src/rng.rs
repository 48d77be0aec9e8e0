//! Counter-based randomness.
//!
//! Every random draw in the crate is a pure function of a seed and a small
//! tuple of counters (epoch, batch, pixel, draw index, ...). Results never
//! depend on evaluation order, so pixels can be processed on any number of
//! threads without changing a single bit of output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep independent streams (initialisation, sampling,
/// shuffling, generation, noise) from colliding on equal counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Uniform = 2,
    Shuffle = 3,
    Generate = 4,
    Noise = 5,
    Split = 6,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    // SplitMix64 finaliser.
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A keyed generator: `(seed, stream)` fixed at construction, counters
/// supplied per draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedRng {
    key: u64,
}

impl KeyedRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self {
            key: mix(seed ^ mix(stream as u64).wrapping_add(0x9e37_79b9_7f4a_7c15)),
        }
    }

    /// Derives a child key by absorbing one more counter.
    pub fn child(&self, counter: u64) -> Self {
        Self {
            key: mix(self.key.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix(counter)),
        }
    }

    pub fn bits(&self, counters: &[u64]) -> u64 {
        counters
            .iter()
            .fold(self.key, |acc, &c| self.absorb(acc, c))
    }

    fn absorb(&self, acc: u64, c: u64) -> u64 {
        mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix(c.wrapping_add(self.key)))
    }

    /// Uniform in the open interval (0, 1), 53 bits of resolution.
    pub fn uniform(&self, counters: &[u64]) -> f64 {
        ((self.bits(counters) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// A conventional stream generator seeded from the keyed counters, for
    /// draws that need a sequential sampler (Gamma, Normal, shuffles).
    pub fn stream(&self, counters: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.bits(counters))
    }
}
