//! Mean softmax cross-entropy and the supervised contrastive loss, each with
//! exact gradients with respect to its inputs.
//!
//! Contrastive-loss conventions: embeddings are L2-normalized before any
//! dot product (zero rows stay zero); for anchor `i` the positives are the
//! other samples sharing its label and the denominator sums over every
//! `k != i`; each anchor's loss is averaged over its positives, and the batch
//! loss is averaged over anchors that have at least one positive. Anchors
//! without positives contribute nothing.

use thiserror::Error;

use crate::model::NUM_CLASSES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample {index}: label {label} is not a valid class")]
    InvalidLabel { index: usize, label: u8 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("sample {index}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("{embeddings} embeddings but {labels} labels")]
    LabelCount { embeddings: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledLogits {
    pub logits: [f64; NUM_CLASSES],
    pub label: u8,
}

/// Mean of −log softmax(logits)[label] over the batch, and its gradient
/// with respect to every sample's logits (including the 1/N factor).
pub fn cross_entropy(batch: &[LabeledLogits]) -> Result<(f64, Vec<[f64; NUM_CLASSES]>), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (index, s) in batch.iter().enumerate() {
        let y = usize::from(s.label);
        if y >= NUM_CLASSES {
            return Err(LossError::InvalidLabel { index, label: s.label });
        }
        let m = s.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut exps = [0.0; NUM_CLASSES];
        for (e, &z) in exps.iter_mut().zip(&s.logits) {
            *e = (z - m).exp();
        }
        let sum: f64 = exps.iter().sum();
        total += m + sum.ln() - s.logits[y];
        let mut g = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            let p = exps[c] / sum;
            g[c] = scale * (p - if c == y { 1.0 } else { 0.0 });
        }
        grads.push(g);
    }
    Ok((total * scale, grads))
}

/// Input to the supervised contrastive loss: rows are raw encoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct SclBatch<'a> {
    pub embeddings: &'a [Vec<f64>],
    pub labels: &'a [u8],
    pub temperature: f64,
}

impl SclBatch<'_> {
    fn validate(&self) -> Result<usize, LossError> {
        if self.embeddings.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LossError::InvalidTemperature(self.temperature));
        }
        if self.labels.len() != self.embeddings.len() {
            return Err(LossError::LabelCount {
                embeddings: self.embeddings.len(),
                labels: self.labels.len(),
            });
        }
        let dim = self.embeddings[0].len();
        for (index, row) in self.embeddings.iter().enumerate() {
            if row.len() != dim {
                return Err(LossError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        Ok(dim)
    }
}

/// Supervised contrastive loss and its gradient with respect to the raw
/// (pre-normalization) embeddings.
pub fn scl_loss(batch: &SclBatch<'_>) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let dim = batch.validate()?;
    let n = batch.embeddings.len();
    let tau = batch.temperature;

    let norms: Vec<f64> = batch
        .embeddings
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let unit: Vec<Vec<f64>> = batch
        .embeddings
        .iter()
        .zip(&norms)
        .map(|(r, &nrm)| {
            if nrm > 0.0 {
                r.iter().map(|x| x / nrm).collect()
            } else {
                vec![0.0; dim]
            }
        })
        .collect();

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let s = unit[i].iter().zip(&unit[k]).map(|(a, b)| a * b).sum::<f64>() / tau;
            sim[i * n + k] = s;
            sim[k * n + i] = s;
        }
    }

    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && batch.labels[j] == batch.labels[i]).count())
        .collect();
    let anchors = positives.iter().filter(|&&p| p > 0).count();
    let mut grads = vec![vec![0.0; dim]; n];
    if anchors == 0 {
        return Ok((0.0, grads));
    }
    let weight = 1.0 / anchors as f64;

    // coef[i*n+k] = dL/dsim[i][k]
    let mut coef = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        if positives[i] == 0 {
            continue;
        }
        let row = &sim[i * n..(i + 1) * n];
        let m = (0..n).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] - m).exp()).sum();
        let lse = m + denom.ln();
        let inv_pos = 1.0 / positives[i] as f64;
        let mut pos_sum = 0.0;
        for k in (0..n).filter(|&k| k != i) {
            let is_pos = batch.labels[k] == batch.labels[i];
            if is_pos {
                pos_sum += row[k];
            }
            let softmax = (row[k] - m).exp() / denom;
            coef[i * n + k] = weight * (softmax - if is_pos { inv_pos } else { 0.0 });
        }
        loss += weight * (lse - pos_sum * inv_pos);
    }

    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        // dL/du_i = Σ_k (coef[i][k] + coef[k][i]) u_k / τ
        let mut g_unit = vec![0.0; dim];
        for k in 0..n {
            let c = coef[i * n + k] + coef[k * n + i];
            if c != 0.0 {
                for (g, u) in g_unit.iter_mut().zip(&unit[k]) {
                    *g += c * u / tau;
                }
            }
        }
        // through u = e / ||e||
        let along: f64 = g_unit.iter().zip(&unit[i]).map(|(g, u)| g * u).sum();
        for d in 0..dim {
            grads[i][d] = (g_unit[d] - along * unit[i][d]) / norms[i];
        }
    }
    Ok((loss, grads))
}

/// Term-by-term evaluation of the contrastive loss with nested loops over
/// anchors, positives and the denominator. Shares only input validation
/// with [`scl_loss`]; intended as a test oracle.
pub fn scl_loss_bruteforce(batch: &SclBatch<'_>) -> Result<f64, LossError> {
    batch.validate()?;
    let n = batch.embeddings.len();
    let normalize = |row: &Vec<f64>| -> Vec<f64> {
        let mut len = 0.0;
        for x in row {
            len += x * x;
        }
        let len = len.sqrt();
        row.iter().map(|x| if len > 0.0 { x / len } else { 0.0 }).collect()
    };
    let unit: Vec<Vec<f64>> = batch.embeddings.iter().map(normalize).collect();
    let dot = |a: &Vec<f64>, b: &Vec<f64>| -> f64 {
        let mut s = 0.0;
        for d in 0..a.len() {
            s += a[d] * b[d];
        }
        s
    };

    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let mut anchor_loss = 0.0;
        let mut count = 0usize;
        for j in 0..n {
            if j == i || batch.labels[j] != batch.labels[i] {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for k in 0..n {
                if k != i {
                    m = m.max(dot(&unit[i], &unit[k]) / batch.temperature);
                }
            }
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    denom += (dot(&unit[i], &unit[k]) / batch.temperature - m).exp();
                }
            }
            let numer = (dot(&unit[i], &unit[j]) / batch.temperature - m).exp();
            anchor_loss -= (numer / denom).ln();
            count += 1;
        }
        if count > 0 {
            total += anchor_loss / count as f64;
            anchors += 1;
        }
    }
    Ok(if anchors == 0 { 0.0 } else { total / anchors as f64 })
}
