//! Deterministic random streams for init, sampling and augmentation.
//!
//! One generator family is used everywhere: xoshiro256** seeded through
//! SplitMix64, so a run is fully described by a single `u64` seed. Streams can
//! be derived from (seed, tag...) tuples; per-sample augmentation uses
//! `derived(seed, &[epoch, index])` so the pixels a sample sees do not depend
//! on batch composition or visit order.

#[inline]
fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

/// SplitMix64 output scrambler (finalizer only, no counter increment).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// xoshiro256** generator with a fixed, documented seeding procedure.
#[derive(Clone, Debug)]
pub struct RngStream {
    s: [u64; 4],
}

impl RngStream {
    /// Seeds the four state words with consecutive SplitMix64 outputs.
    pub fn new_seeded(seed: u64) -> Self {
        let mut x = seed;
        let mut s = [0u64; 4];
        for w in &mut s {
            x = x.wrapping_add(GOLDEN);
            *w = mix64(x);
        }
        RngStream { s }
    }

    /// Stream keyed by `(seed, tags...)`. Same inputs, same stream, always;
    /// independent of how many values any other stream has drawn.
    pub fn derived(seed: u64, tags: &[u64]) -> Self {
        let mut acc = seed;
        for &t in tags {
            acc = mix64(acc ^ mix64(t.wrapping_add(GOLDEN)));
        }
        Self::new_seeded(acc)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = rotl(s[1].wrapping_mul(5), 7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection, so
    /// every value is exactly equally likely. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is meaningless");
        let n = n as u64;
        loop {
            let x = self.next_u64();
            let m = (x as u128).wrapping_mul(n as u128);
            let low = m as u64;
            if low < n {
                let threshold = n.wrapping_neg() % n;
                if low < threshold {
                    continue;
                }
            }
            return (m >> 64) as usize;
        }
    }

    /// Gaussian sample via Box-Muller. Draws two uniforms per call (the
    /// second branch is discarded; stream position stays call-count based).
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}
