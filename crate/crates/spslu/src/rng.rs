//! Deterministic 64-bit PRNG with named streams.
//!
//! The generator is xorshift64*, seeded through a SplitMix64 scramble so that
//! seed 0 is usable. Each consumer of randomness draws from its own stream:
//!
//! * `Stream::Init` — parameter initialization; additionally, every parameter
//!   derives a private stream from its name, so the values a given tensor
//!   receives do not depend on which other tensors exist in the model.
//! * `Stream::Shuffle` — epoch-level batch shuffling.
//! * `Stream::Dropout` — dropout masks, drawn in forward-pass order.
//!
//! Identical seeds therefore give bit-identical training trajectories, and
//! model variants perturb only the streams they actually consume.

use crate::scalar::Scalar;

/// Randomness consumers. Salts keep the streams disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Dropout,
}

impl Stream {
    fn salt(self) -> u64 {
        match self {
            Stream::Init => 0x9e37_79b9_7f4a_7c15,
            Stream::Shuffle => 0xbf58_476d_1ce4_e5b9,
            Stream::Dropout => 0x94d0_49bb_1331_11eb,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// xorshift64* generator with a recorded initial seed.
#[derive(Clone, Debug)]
pub struct Prng {
    state: u64,
    seed: u64,
}

impl Prng {
    /// Stream for one named consumer under a master seed.
    pub fn stream(seed: u64, stream: Stream) -> Self {
        Self::with_state(seed, splitmix64(seed ^ stream.salt()))
    }

    /// Private init stream for one parameter, keyed by its name.
    pub fn for_param(seed: u64, name: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325; // FNV-1a
        for b in name.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        Self::with_state(seed, splitmix64(splitmix64(seed ^ Stream::Init.salt()) ^ h))
    }

    fn with_state(seed: u64, state: u64) -> Self {
        // xorshift state must be nonzero
        let state = if state == 0 { 0x4d59_5df4_d0f3_3173 } else { state };
        Prng { state, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform<S: Scalar>(&mut self, lo: f64, hi: f64) -> S {
        S::from_f64(lo + (hi - lo) * self.next_f64())
    }

    /// Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::stream(42, Stream::Shuffle);
        let mut b = Prng::stream(42, Stream::Shuffle);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_disjoint() {
        let mut a = Prng::stream(42, Stream::Init);
        let mut b = Prng::stream(42, Stream::Dropout);
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn param_streams_depend_on_name_not_order() {
        let mut w1 = Prng::for_param(7, "enc.fwd.w");
        let first: Vec<u64> = (0..8).map(|_| w1.next_u64()).collect();
        // Re-derive later (as a different variant would); values must match.
        let mut w2 = Prng::for_param(7, "enc.fwd.w");
        let second: Vec<u64> = (0..8).map(|_| w2.next_u64()).collect();
        assert_eq!(first, second);
        let mut other = Prng::for_param(7, "enc.bwd.w");
        assert_ne!(first[0], other.next_u64());
    }

    #[test]
    fn uniform_bounds() {
        let mut r = Prng::stream(1, Stream::Init);
        for _ in 0..1000 {
            let x: f64 = r.uniform(-0.25, 0.25);
            assert!((-0.25..0.25).contains(&x));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = Prng::stream(3, Stream::Shuffle);
        let mut xs: Vec<usize> = (0..50).collect();
        r.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
