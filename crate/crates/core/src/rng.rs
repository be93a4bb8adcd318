//! Deterministic pseudo-random streams.
//!
//! Every random choice in the crate (weight init, phantom synthesis, split
//! shuffles, epoch shuffles) draws from a [`SplitMix64`] stream whose seed is
//! derived from a run seed plus a small tuple of stream tags, so one stream's
//! consumption never shifts another's. Reference outputs for seed 0:
//!
//! ```text
//! 0xe220a8397b1dcdaf 0x6e789e6aa1b965f4 0x06c45d188009454f
//! 0xf88bb8a8724c81ec 0x1b39896a51a8749b
//! ```
//!
//! Bit-equality is promised within this implementation only; the
//! distribution samplers from `rand` sit on top of the raw stream.

use rand::{Error as RandError, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Split-and-advance 64-bit generator (Steele, Lea & Flood).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for `seed` specialised by `tags`, e.g. `(seed, [INIT])` or
    /// `(seed, [SHUFFLE, epoch])`.
    pub fn derived(seed: u64, tags: &[u64]) -> Self {
        Self::new(derive_seed(seed, tags))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Mixes a seed with stream tags into an independent seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = SplitMix64::new(seed).next_u64();
    for &tag in tags {
        acc = SplitMix64::new(acc ^ tag.wrapping_mul(GOLDEN_GAMMA)).next_u64();
    }
    acc
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = SplitMix64::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Stream tags. Arbitrary but fixed constants.
pub mod stream {
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const PHANTOM: u64 = 0x5048_414e;
    pub const SPLIT: u64 = 0x5350_4c54;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_reference_sequence() {
        let mut rng = SplitMix64::new(0);
        let expected = [
            0xe220a8397b1dcdaf_u64,
            0x6e789e6aa1b965f4,
            0x06c45d188009454f,
            0xf88bb8a8724c81ec,
            0x1b39896a51a8749b,
        ];
        for e in expected {
            assert_eq!(rng.next_u64(), e);
        }
    }

    #[test]
    fn unit_interval() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..10_000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn derived_streams_differ_by_tag() {
        assert_ne!(derive_seed(1, &[stream::INIT]), derive_seed(1, &[stream::SHUFFLE]));
        assert_ne!(
            derive_seed(1, &[stream::SHUFFLE, 0]),
            derive_seed(1, &[stream::SHUFFLE, 1])
        );
        assert_eq!(derive_seed(9, &[4, 5]), derive_seed(9, &[4, 5]));
    }
}
