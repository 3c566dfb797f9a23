//! Splittable, counter-based random streams.
//!
//! A stream is the ChaCha8 keystream keyed by `base_seed` with the 64-bit
//! stream id set to `stream_index`. Distinct indices select disjoint
//! keystreams; the output is value-stable across platforms. Transcendental
//! functions used for sampling come from `libm` so that derived normals are
//! bit-identical everywhere too.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic random stream identified by `(base_seed, stream_index)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    base_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

/// Stream `index` of the family keyed by `base_seed`.
pub fn derive_stream(base_seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    RngStream { base_seed, stream_index: index, rng, spare_normal: None }
}

impl RngStream {
    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Position in the keystream, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Marsaglia polar method.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let r2 = u * u + v * v;
            if r2 > 0.0 && r2 < 1.0 {
                let factor = libm::sqrt(-2.0 * libm::log(r2) / r2);
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Standard normal conditioned on `|z| <= bound`, by rejection.
    pub fn truncated_normal(&mut self, bound: f64) -> f64 {
        loop {
            let z = self.standard_normal();
            if z.abs() <= bound {
                return z;
            }
        }
    }

    /// Uniform integer in `[0, bound)` without modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        let zone = u64::MAX - u64::MAX.wrapping_rem(bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
