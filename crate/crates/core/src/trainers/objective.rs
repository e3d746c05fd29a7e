use crate::data::Sample;
use crate::losses::{cross_entropy, scl_loss, LabeledLogits, SclBatch};
use crate::model::{backward_from_forward, forward, GradVector, ModelSpec, ParamVector, Upstream};

use super::TrainError;

/// Mean cross-entropy of `batch` and its exact gradient at `params`.
pub fn ce_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[&Sample],
) -> Result<(f64, GradVector), TrainError> {
    let forwards = batch
        .iter()
        .map(|s| forward(spec, params, &s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let logits: Vec<LabeledLogits> = forwards
        .iter()
        .zip(batch)
        .map(|(f, s)| LabeledLogits {
            logits: f.logits,
            label: s.label,
        })
        .collect();
    let (loss, d_logits) = cross_entropy(&logits)?;
    let upstream: Vec<Upstream> = d_logits.into_iter().map(Upstream::Logits).collect();
    let pairs: Vec<_> = forwards.iter().zip(&upstream).collect();
    Ok((loss, backward_from_forward(spec, params, &pairs)?))
}

/// Supervised contrastive loss of `batch`'s embeddings and its exact
/// gradient at `params`. The head block of the gradient is always zero.
pub fn scl_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[&Sample],
    temperature: f64,
) -> Result<(f64, GradVector), TrainError> {
    let forwards = batch
        .iter()
        .map(|s| forward(spec, params, &s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let embeddings: Vec<Vec<f64>> = forwards.iter().map(|f| f.embedding.clone()).collect();
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let (loss, d_embed) = scl_loss(&SclBatch {
        embeddings: &embeddings,
        labels: &labels,
        temperature,
    })?;
    let upstream: Vec<Upstream> = d_embed.into_iter().map(Upstream::Embedding).collect();
    let pairs: Vec<_> = forwards.iter().zip(&upstream).collect();
    Ok((loss, backward_from_forward(spec, params, &pairs)?))
}
