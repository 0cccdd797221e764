//! Counter-based Gaussian streams.
//!
//! Every Monte Carlo path owns its own ChaCha8 stream keyed by
//! `(seed, path index)`, so results do not depend on how paths are scheduled
//! across threads. A block of `n` normals always consumes `ceil(n/2)` pairs of
//! `u64` draws, which makes random access by block index possible.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Moves the stream to the start of block `index`, where every block holds
    /// `block_len` normals.
    pub fn seek_block(&mut self, index: u64, block_len: usize) {
        let words = Self::words_per_block(block_len) as u128;
        self.rng.set_word_pos(index as u128 * words);
    }

    fn words_per_block(block_len: usize) -> u64 {
        // two u64 (four u32 words) per Box-Muller pair
        (block_len as u64).div_ceil(2) * 4
    }

    #[inline]
    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Fills `out` with independent standard normals (Box-Muller).
    pub fn fill(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.pair().0;
        }
    }

    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (radius * c, radius * s)
    }
}
