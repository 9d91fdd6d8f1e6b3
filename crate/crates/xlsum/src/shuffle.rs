//! Deterministic shuffling shared by the corpus and language-model code.
//!
//! Dataset splits must be bit-reproducible across platforms and releases, so
//! instead of an external RNG this module pins a fully specified generator:
//! SplitMix64 (Steele, Lea & Flood; the constants below are the reference
//! ones) driving a descending Fisher-Yates shuffle with `next_u64() % (i+1)`
//! as the index rule.

/// SplitMix64 pseudo-random generator.
///
/// State update adds the golden-ratio increment `0x9E3779B97F4A7C15`; output
/// mixing multiplies by `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB` with
/// xor-shifts of 30, 27 and 31 bits.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform `f64` in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// In-place Fisher-Yates shuffle: for `i = n-1 .. 1`, swap `i` with
/// `next_u64() % (i + 1)`. The modulo bias is negligible for dataset sizes
/// and keeps the index rule portable.
pub fn fisher_yates<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Indices `0..n` in seeded shuffle order.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    fisher_yates(&mut idx, seed);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Frozen outputs of the reference SplitMix64 implementation.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 16294208416658607535);
        assert_eq!(rng.next_u64(), 7960286522194355700);
        assert_eq!(rng.next_u64(), 487617019471545679);

        let mut rng = SplitMix64::new(1234567);
        assert_eq!(rng.next_u64(), 6457827717110365317);
        assert_eq!(rng.next_u64(), 3203168211198807973);
        assert_eq!(rng.next_u64(), 9817491932198370423);
    }

    #[test]
    fn shuffle_is_deterministic_and_permutes() {
        let a = shuffled_indices(100, 7);
        let b = shuffled_indices(100, 7);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(shuffled_indices(100, 8), a);
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..1000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
