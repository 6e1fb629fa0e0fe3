//! Bloom filter used as the frontier's dedup pre-filter.

use std::f64::consts::LN_2;
use std::hash::{DefaultHasher, Hash, Hasher};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BloomError {
    #[error("expected insert count must be at least 1")]
    ZeroCapacity,
    #[error("target false-positive rate {0} is not in (0, 1)")]
    BadRate(f64),
}

/// Sizing for a [`BloomFilter`].
///
/// `m_bits = ceil(-n ln p / ln(2)^2)` and `k_hashes = max(1, round(m/n ln 2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BloomParams {
    pub n_expected: u64,
    pub target_fpr: f64,
    pub m_bits: u64,
    pub k_hashes: u32,
}

impl BloomParams {
    pub fn new(n_expected: u64, target_fpr: f64) -> Result<Self, BloomError> {
        if n_expected == 0 {
            return Err(BloomError::ZeroCapacity);
        }
        if !(target_fpr > 0.0 && target_fpr < 1.0) {
            return Err(BloomError::BadRate(target_fpr));
        }
        let n = n_expected as f64;
        let m_bits = (-n * target_fpr.ln() / (LN_2 * LN_2)).ceil().max(1.0) as u64;
        let k_hashes = ((m_bits as f64 / n) * LN_2).round().max(1.0) as u32;
        Ok(Self {
            n_expected,
            target_fpr,
            m_bits,
            k_hashes,
        })
    }
}

impl Default for BloomParams {
    fn default() -> Self {
        Self::new(100_000, 0.01).expect("constant parameters are valid")
    }
}

/// A classic bit-array Bloom filter with double hashing: probe `i` lands on
/// `h1 + i * h2 (mod m)`.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    params: BloomParams,
    words: Vec<u64>,
}

impl BloomFilter {
    pub fn new(params: BloomParams) -> Self {
        let words = params.m_bits.div_ceil(64) as usize;
        Self {
            params,
            words: vec![0; words],
        }
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn insert<T: Hash + ?Sized>(&mut self, item: &T) {
        for bit in self.probes(item) {
            self.words[(bit / 64) as usize] |= 1 << (bit % 64);
        }
    }

    pub fn may_contain<T: Hash + ?Sized>(&self, item: &T) -> bool {
        self.probes(item)
            .all(|bit| self.words[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    /// Number of set bits; only used for diagnostics.
    pub fn ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn probes<T: Hash + ?Sized>(&self, item: &T) -> impl Iterator<Item = u64> {
        let h1 = seeded_hash(0x9e37_79b9_7f4a_7c15, item);
        // Odd step so every probe sequence cycles through distinct residues
        // whenever m is a power of two.
        let h2 = seeded_hash(0xc2b2_ae3d_27d4_eb4f, item) | 1;
        let m = self.params.m_bits;
        (0..self.params.k_hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
    }
}

fn seeded_hash<T: Hash + ?Sized>(seed: u64, item: &T) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_u64(seed);
    item.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_matches_closed_form() {
        let p = BloomParams::new(100_000, 0.01).unwrap();
        // -1e5 * ln(0.01) / ln(2)^2 = 958505.83...
        assert_eq!(p.m_bits, 958_506);
        // 9.58506 * ln 2 = 6.64
        assert_eq!(p.k_hashes, 7);

        let tiny = BloomParams::new(1, 0.5).unwrap();
        assert_eq!(tiny.m_bits, 2);
        assert_eq!(tiny.k_hashes, 1);
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(BloomParams::new(0, 0.01), Err(BloomError::ZeroCapacity));
        assert!(BloomParams::new(10, 0.0).is_err());
        assert!(BloomParams::new(10, 1.0).is_err());
        assert!(BloomParams::new(10, f64::NAN).is_err());
    }

    #[test]
    fn empty_filter_contains_nothing() {
        let f = BloomFilter::new(BloomParams::new(1000, 0.01).unwrap());
        assert!(!f.may_contain("http://a.com/"));
        assert_eq!(f.ones(), 0);
    }

    #[test]
    fn inserted_items_are_found() {
        let mut f = BloomFilter::new(BloomParams::new(1000, 0.01).unwrap());
        for i in 0..1000 {
            f.insert(&format!("http://a.com/{i}"));
        }
        for i in 0..1000 {
            assert!(f.may_contain(&format!("http://a.com/{i}")));
        }
    }
}
