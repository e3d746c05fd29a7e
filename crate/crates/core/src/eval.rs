//! Binary classification metrics with abusive as the positive class,
//! per-platform reports, and embedding export.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{balanced_subsample, hash_features, DataError, PlatformDataset, ABUSIVE};
use crate::model::{forward, ModelError, ModelSpec, ParamVector};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == ABUSIVE, y == ABUSIVE) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub positive_f1: f64,
    pub macro_f1: f64,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// F1 with 0/0 taken as 0; macro F1 is the mean of the abusive and normal
/// class F1 scores. An empty count gives all zeros.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let total = c.total();
    let accuracy = if total == 0 {
        0.0
    } else {
        (c.tp + c.tn) as f64 / total as f64
    };
    let positive_f1 = f1(c.tp, c.fp, c.fn_);
    let negative_f1 = f1(c.tn, c.fn_, c.fp);
    Metrics {
        accuracy,
        positive_f1,
        macro_f1: (positive_f1 + negative_f1) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformMetrics {
    pub platform: String,
    pub n: usize,
    pub accuracy: f64,
    pub positive_f1: f64,
    pub macro_f1: f64,
}

/// Rows in platform order; `aggregate` holds unweighted means of the rows
/// and the total `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub platforms: Vec<PlatformMetrics>,
    pub aggregate: PlatformMetrics,
}

pub const AGGREGATE_NAME: &str = "avg";

impl MetricsReport {
    pub fn from_rows(platforms: Vec<PlatformMetrics>) -> Result<Self, EvalError> {
        if platforms.is_empty() {
            return Err(EvalError::Empty);
        }
        let k = platforms.len() as f64;
        let mean = |f: fn(&PlatformMetrics) -> f64| platforms.iter().map(f).sum::<f64>() / k;
        let aggregate = PlatformMetrics {
            platform: AGGREGATE_NAME.into(),
            n: platforms.iter().map(|p| p.n).sum(),
            accuracy: mean(|p| p.accuracy),
            positive_f1: mean(|p| p.positive_f1),
            macro_f1: mean(|p| p.macro_f1),
        };
        Ok(Self { platforms, aggregate })
    }

    pub fn row(&self, platform: &str) -> Option<&PlatformMetrics> {
        self.platforms.iter().find(|p| p.platform == platform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Full,
    /// Majority class downsampled with this seed before prediction.
    Balanced(u64),
}

/// Argmax predictions for every example of `dataset`.
pub fn predict(spec: &ModelSpec, params: &ParamVector, dataset: &PlatformDataset) -> Result<Vec<u8>, EvalError> {
    dataset
        .examples
        .iter()
        .map(|e| Ok(forward(spec, params, &hash_features(&e.text, spec.hash_buckets))?.predicted_class()))
        .collect()
}

pub fn evaluate_platform(
    spec: &ModelSpec,
    params: &ParamVector,
    dataset: &PlatformDataset,
    mode: EvalMode,
) -> Result<PlatformMetrics, EvalError> {
    let balanced;
    let data = match mode {
        EvalMode::Full => dataset,
        EvalMode::Balanced(seed) => {
            balanced = balanced_subsample(dataset, seed)?;
            &balanced
        }
    };
    let labels: Vec<u8> = data.examples.iter().map(|e| e.label).collect();
    let m = metrics(&confusion(&predict(spec, params, data)?, &labels)?);
    Ok(PlatformMetrics {
        platform: dataset.platform.clone(),
        n: data.len(),
        accuracy: m.accuracy,
        positive_f1: m.positive_f1,
        macro_f1: m.macro_f1,
    })
}

pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamVector,
    platforms: &[&PlatformDataset],
    mode: EvalMode,
) -> Result<MetricsReport, EvalError> {
    let rows = platforms
        .iter()
        .map(|d| evaluate_platform(spec, params, d, mode))
        .collect::<Result<Vec<_>, _>>()?;
    MetricsReport::from_rows(rows)
}

/// CSV `platform,label,e_0,…,e_{D−1}`, one row per example, values in
/// scientific notation with 17 significant digits.
pub fn write_embeddings<W: Write>(
    spec: &ModelSpec,
    params: &ParamVector,
    platforms: &[&PlatformDataset],
    out: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["platform".to_owned(), "label".to_owned()];
    header.extend((0..spec.embedding_dim()).map(|k| format!("e_{k}")));
    w.write_record(&header)?;
    for d in platforms {
        for e in &d.examples {
            let f = forward(spec, params, &hash_features(&e.text, spec.hash_buckets))?;
            let mut row = vec![e.platform.clone(), e.label.to_string()];
            row.extend(f.embedding.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_embeddings(
    spec: &ModelSpec,
    params: &ParamVector,
    platforms: &[&PlatformDataset],
    path: &Path,
) -> Result<(), EvalError> {
    let file = File::create(path).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })?;
    write_embeddings(spec, params, platforms, BufWriter::new(file))
}
