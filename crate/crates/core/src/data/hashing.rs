use std::collections::BTreeMap;

use super::DataError;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercases, then splits on every non-alphanumeric character. Empty
/// tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Sparse bag-of-words counts over `dim` hash buckets.
///
/// Entries are sorted by bucket, each bucket appears once, and every count
/// is at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(usize, u32)>,
}

impl FeatureVector {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from explicit `(bucket, count)` pairs, checking the
    /// ordering and range invariants.
    pub fn from_counts(dim: usize, entries: &[(usize, u32)]) -> Result<Self, DataError> {
        let mut prev = None;
        for &(index, count) in entries {
            if index >= dim {
                return Err(DataError::InvalidFeatures(format!(
                    "bucket {index} out of range for dimension {dim}"
                )));
            }
            if count == 0 {
                return Err(DataError::InvalidFeatures(format!("zero count at bucket {index}")));
            }
            if prev.is_some_and(|p| p >= index) {
                return Err(DataError::InvalidFeatures(
                    "bucket indices must be strictly increasing".into(),
                ));
            }
            prev = Some(index);
        }
        Ok(Self {
            dim,
            entries: entries.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hashes each token of `text` with FNV-1a (UTF-8 bytes) into one of
/// `buckets` bins and accumulates counts.
///
/// Panics if `buckets` is zero.
pub fn hash_features(text: &str, buckets: usize) -> FeatureVector {
    assert!(buckets > 0, "hash_features needs at least one bucket");
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for token in tokenize(text) {
        // u64 -> usize is lossless for the modulus since buckets fits in usize
        let bucket = (fnv1a64(token.as_bytes()) % buckets as u64) as usize;
        *counts.entry(bucket).or_insert(0) += 1;
    }
    FeatureVector {
        dim: buckets,
        entries: counts.into_iter().collect(),
    }
}
