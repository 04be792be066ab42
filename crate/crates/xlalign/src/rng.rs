//! Deterministic pseudo-random numbers for parameter init and batch shuffling.
//!
//! Every source of randomness in the crate flows through [`SplitMix64`] so a
//! (seed, config, corpus) triple fully determines a run. The generator is the
//! SplitMix64 sequence of Steele, Lea & Flood: state advances by the additive
//! constant 0x9E3779B97F4A7C15 and the output is finalized with two
//! xor-shift-multiply rounds (0xBF58476D1CE4E5B9, 0x94D049BB133111EB).
//! Bounded draws use the multiply-shift reduction (`(x * n) >> 64`), and
//! shuffles are Fisher-Yates from the top index down. All of this is fixed:
//! reimplementing these four lines in any language reproduces the exact
//! batch order and initialization of a run.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// In-place Fisher-Yates shuffle, iterating i from len-1 down to 1 and
    /// swapping with a uniform index in [0, i].
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
