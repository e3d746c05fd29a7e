//! Labeled multi-platform text corpora: JSONL ingestion, feature hashing,
//! role splits, class-balanced subsampling, and a synthetic generator with
//! controllable spurious correlations.

mod hashing;
mod jsonl;
mod splits;
mod synth;

use std::path::PathBuf;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hashing::{fnv1a64, hash_features, tokenize, FeatureVector};
pub use jsonl::{load_jsonl, parse_jsonl, write_jsonl};
pub use splits::{make_splits, protocol_split, Role, SplitPlan, PROTOCOL_TRAIN_PLATFORMS, PROTOCOL_VALIDATION_PLATFORM};
pub use synth::{generate_synthetic, SynthConfig, SynthPlatform};

/// Class id of non-abusive text.
pub const NORMAL: u8 = 0;
/// Class id of abusive (hate or offensive) text; the positive class.
pub const ABUSIVE: u8 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: label {value} is not 0 or 1")]
    BadLabel { line: usize, value: String },
    #[error("no examples")]
    NoExamples,
    #[error("unknown platform `{0}`")]
    UnknownPlatform(String),
    #[error("platform `{platform}` assigned to both {first} and {second}")]
    RoleOverlap {
        platform: String,
        first: Role,
        second: Role,
    },
    #[error("platform `{0}` lacks one of the two classes")]
    MissingClass(String),
    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
    #[error("invalid feature vector: {0}")]
    InvalidFeatures(String),
}

/// One labeled text with its platform of origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: u8,
    pub platform: String,
}

/// All examples from one platform, in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformDataset {
    pub platform: String,
    pub examples: Vec<Example>,
}

impl PlatformDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `[normal, abusive]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let abusive = self.examples.iter().filter(|e| e.label == ABUSIVE).count();
        [self.examples.len() - abusive, abusive]
    }

    /// Hashes every example into `buckets` bins.
    pub fn encode(&self, buckets: usize) -> EncodedPlatform {
        EncodedPlatform {
            platform: self.platform.clone(),
            samples: self
                .examples
                .iter()
                .map(|e| Sample {
                    features: hash_features(&e.text, buckets),
                    label: e.label,
                })
                .collect(),
        }
    }
}

/// A hashed training or evaluation sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: u8,
}

/// A platform whose texts have been hashed for a particular model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPlatform {
    pub platform: String,
    pub samples: Vec<Sample>,
}

impl EncodedPlatform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Downsamples the majority class uniformly at random to the minority
/// count. Selected examples keep their original relative order.
pub fn balanced_subsample(dataset: &PlatformDataset, seed: u64) -> Result<PlatformDataset, DataError> {
    let [normal, abusive] = dataset.class_counts();
    if normal == 0 || abusive == 0 {
        return Err(DataError::MissingClass(dataset.platform.clone()));
    }
    if normal == abusive {
        return Ok(dataset.clone());
    }
    let (majority_label, minority) = if normal > abusive {
        (NORMAL, abusive)
    } else {
        (ABUSIVE, normal)
    };
    let majority_positions: Vec<usize> = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == majority_label)
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; dataset.examples.len()];
    for (i, e) in dataset.examples.iter().enumerate() {
        keep[i] = e.label != majority_label;
    }
    for pick in index::sample(&mut rng, majority_positions.len(), minority) {
        keep[majority_positions[pick]] = true;
    }

    Ok(PlatformDataset {
        platform: dataset.platform.clone(),
        examples: dataset
            .examples
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(e, _)| e.clone())
            .collect(),
    })
}
