//! Signed feature hashing over unigrams and adjacent bigrams.
//!
//! Each feature key is hashed with 64-bit FNV-1a. The low bits (masked to the
//! power-of-two dimension) select the index; bit 63 selects the sign (`0` ->
//! `+1`, `1` -> `-1`). Keys are `u\x1f<word>` for unigrams and
//! `b\x1f<left>\x1f<right>` for bigrams, words lowercased.

use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 1 << 18;
const MIN_HASH_DIM: usize = 1 << 10;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFeatures {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseFeatures {
    /// Sorts, merges duplicate indices and drops zeros.
    pub fn new(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        if let Some(&(i, v)) = entries.iter().find(|(i, v)| *i as usize >= dim || !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "feature ({i}, {v}) invalid for dimension {dim}"
            )));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Ok(Self { dim, entries: merged })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashingFeaturizer {
    dim: usize,
}

impl HashingFeaturizer {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_HASH_DIM || !dim.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "hash dimension must be a power of two >= {MIN_HASH_DIM}, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn slot(&self, key: &[u8]) -> (u32, f64) {
        let h = fnv1a64(key);
        let index = (h & (self.dim as u64 - 1)) as u32;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }

    pub fn featurize<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> SparseFeatures {
        let words: Vec<String> = words.into_iter().map(str::to_lowercase).collect();
        let mut entries = Vec::with_capacity(words.len() * 2);
        for w in &words {
            entries.push(self.slot(format!("u\x1f{w}").as_bytes()));
        }
        for pair in words.windows(2) {
            entries.push(self.slot(format!("b\x1f{}\x1f{}", pair[0], pair[1]).as_bytes()));
        }
        SparseFeatures::new(self.dim, entries).expect("hashed indices are in range")
    }
}

pub fn featurize_hashed<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize) -> Result<SparseFeatures> {
    Ok(HashingFeaturizer::new(dim)?.featurize(words))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_and_single() {
        let f = HashingFeaturizer::new(1 << 10).unwrap();
        assert!(f.featurize([]).is_empty());
        assert_eq!(f.featurize(["backdoor"]).entries().len(), 1);
    }

    #[test]
    fn dimension_checked() {
        assert!(HashingFeaturizer::new(1000).is_err());
        assert!(HashingFeaturizer::new(512).is_err());
        assert!(HashingFeaturizer::new(1 << 12).is_ok());
    }

    #[test]
    fn sparse_merges_and_validates() {
        let s = SparseFeatures::new(8, vec![(3, 1.0), (1, 2.0), (3, -1.0), (5, 0.5)]).unwrap();
        assert_eq!(s.entries(), &[(1, 2.0), (5, 0.5)]);
        assert!(SparseFeatures::new(4, vec![(4, 1.0)]).is_err());
        assert!(SparseFeatures::new(4, vec![(0, f64::NAN)]).is_err());
    }
}
