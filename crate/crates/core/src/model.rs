//! Fixed-architecture text classifier: L2-normalized hashed counts feed a
//! two-layer tanh encoder followed by a linear two-class head.
//!
//! All parameters live in one flat vector with the layout
//!
//! ```text
//! W1 (H1 x V, row-major) | b1 (H1) | W2 (H2 x H1) | b2 (H2) | W3 (C x H2) | b3 (C)
//! ```
//!
//! Gradients use the same layout, so trainers can treat the model as a point
//! in parameter space and never look inside it.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureVector;

/// Number of output classes: normal (0) and abusive (1).
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model dimensions: {0}")]
    InvalidSpec(String),
    #[error("feature index {index} out of range for {buckets} hash buckets")]
    IndexOutOfRange { index: usize, buckets: usize },
    #[error("parameter vector has length {found}, model expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("upstream gradient has dimension {found}, expected {expected}")]
    UpstreamDim { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
}

/// Model dimensions. The class count is fixed at [`NUM_CLASSES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hash_buckets: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl ModelSpec {
    pub fn new(hash_buckets: usize, hidden1: usize, hidden2: usize) -> Result<Self, ModelError> {
        let spec = Self {
            hash_buckets,
            hidden1,
            hidden2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hash_buckets == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(ModelError::InvalidSpec(format!(
                "all dimensions must be positive (V={}, H1={}, H2={})",
                self.hash_buckets, self.hidden1, self.hidden2
            )));
        }
        if self.checked_param_count().is_none() {
            return Err(ModelError::InvalidSpec("parameter count overflows".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Dimension of the encoder output f(x).
    pub fn embedding_dim(&self) -> usize {
        self.hidden2
    }

    pub fn checked_param_count(&self) -> Option<usize> {
        let (v, h1, h2, c) = (self.hash_buckets, self.hidden1, self.hidden2, NUM_CLASSES);
        v.checked_mul(h1)?
            .checked_add(h1)?
            .checked_add(h1.checked_mul(h2)?)?
            .checked_add(h2)?
            .checked_add(h2.checked_mul(c)?)?
            .checked_add(c)
    }

    /// V·H1 + H1 + H1·H2 + H2 + H2·C + C.
    ///
    /// Panics if the count overflows; specs built through [`ModelSpec::new`]
    /// never do.
    pub fn param_count(&self) -> usize {
        self.checked_param_count().expect("parameter count overflows")
    }

    pub fn layout(&self) -> Layout {
        let (v, h1, h2, c) = (self.hash_buckets, self.hidden1, self.hidden2, NUM_CLASSES);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            w1: take(v * h1),
            b1: take(h1),
            w2: take(h1 * h2),
            b2: take(h2),
            w3: take(h2 * c),
            b3: take(c),
        }
    }
}

/// Index ranges of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w3: Range<usize>,
    pub b3: Range<usize>,
}

impl Layout {
    /// Ranges of the three weight matrices, in layout order.
    pub fn weights(&self) -> [Range<usize>; 3] {
        [self.w1.clone(), self.w2.clone(), self.w3.clone()]
    }

    pub fn biases(&self) -> [Range<usize>; 3] {
        [self.b1.clone(), self.b2.clone(), self.b3.clone()]
    }

    /// Parameters of the classification head (W3 and b3), which the
    /// contrastive loss never touches.
    pub fn head(&self) -> Range<usize> {
        self.w3.start..self.b3.end
    }
}

/// Flat model parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

/// A gradient in parameter space, laid out like [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector(Vec<f64>);

macro_rules! flat_vector {
    ($name:ident) => {
        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn from_vec(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }
    };
}

flat_vector!(ParamVector);
flat_vector!(GradVector);

impl ParamVector {
    /// θ ← θ − lr·g. Returns whether every updated entry is finite.
    pub fn descend(&mut self, grad: &GradVector, lr: f64) -> Result<bool, ModelError> {
        if grad.len() != self.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.len(),
                found: grad.len(),
            });
        }
        let mut finite = true;
        for (p, g) in self.0.iter_mut().zip(&grad.0) {
            *p -= lr * g;
            finite &= p.is_finite();
        }
        Ok(finite)
    }
}

impl GradVector {
    pub fn dot(&self, other: &GradVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// self += scale·other.
    pub fn add_scaled(&mut self, other: &GradVector, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}

/// Draws weights uniformly from [−s, s) with s = sqrt(6 / (fan_in + fan_out))
/// per layer, in layout order from a ChaCha8 stream seeded with `seed`.
/// Biases start at zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    let fans = [
        (spec.hash_buckets, spec.hidden1),
        (spec.hidden1, spec.hidden2),
        (spec.hidden2, NUM_CLASSES),
    ];
    for (range, (fan_in, fan_out)) in layout.weights().into_iter().zip(fans) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut values[range] {
            let u: f64 = rng.gen();
            *w = bound * (2.0 * u - 1.0);
        }
    }
    ParamVector(values)
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Nonzero entries of the L2-normalized input.
    input: Vec<(usize, f64)>,
    hidden1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Encoder output f(x), length H2, every entry in (−1, 1).
    pub embedding: Vec<f64>,
    pub logits: [f64; NUM_CLASSES],
    pub cache: Activations,
}

impl ForwardResult {
    pub fn predicted_class(&self) -> u8 {
        // ties go to the normal class
        u8::from(self.logits[1] > self.logits[0])
    }
}

fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<(), ModelError> {
    let expected = spec.param_count();
    if params.len() != expected {
        return Err(ModelError::LengthMismatch {
            expected,
            found: params.len(),
        });
    }
    Ok(())
}

/// embedding = tanh(W2·tanh(W1·x̂ + b1) + b2), logits = W3·embedding + b3,
/// where x̂ is the L2-normalized count vector.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    features: &FeatureVector,
) -> Result<ForwardResult, ModelError> {
    check_params(spec, params)?;
    let (v, h1, h2) = (spec.hash_buckets, spec.hidden1, spec.hidden2);
    let layout = spec.layout();
    let p = params.as_slice();

    let norm = features
        .entries()
        .iter()
        .map(|&(_, c)| f64::from(c) * f64::from(c))
        .sum::<f64>()
        .sqrt();
    let mut input = Vec::with_capacity(features.entries().len());
    for &(index, count) in features.entries() {
        if index >= v {
            return Err(ModelError::IndexOutOfRange { index, buckets: v });
        }
        if count > 0 {
            input.push((index, f64::from(count) / norm));
        }
    }

    let w1 = &p[layout.w1.clone()];
    let b1 = &p[layout.b1.clone()];
    let hidden1: Vec<f64> = (0..h1)
        .map(|h| {
            let row = &w1[h * v..(h + 1) * v];
            let z = input.iter().fold(b1[h], |acc, &(i, x)| acc + row[i] * x);
            z.tanh()
        })
        .collect();

    let w2 = &p[layout.w2.clone()];
    let b2 = &p[layout.b2.clone()];
    let embedding: Vec<f64> = (0..h2)
        .map(|k| {
            let row = &w2[k * h1..(k + 1) * h1];
            let z = row.iter().zip(&hidden1).fold(b2[k], |acc, (w, a)| acc + w * a);
            z.tanh()
        })
        .collect();

    let w3 = &p[layout.w3.clone()];
    let b3 = &p[layout.b3.clone()];
    let mut logits = [0.0; NUM_CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &w3[c * h2..(c + 1) * h2];
        *logit = row.iter().zip(&embedding).fold(b3[c], |acc, (w, e)| acc + w * e);
    }

    Ok(ForwardResult {
        embedding,
        logits,
        cache: Activations { input, hidden1 },
    })
}

/// Gradient of some loss with respect to one sample's outputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Upstream {
    /// ∂L/∂logits (cross-entropy).
    Logits([f64; NUM_CLASSES]),
    /// ∂L/∂embedding (contrastive loss; the head receives nothing).
    Embedding(Vec<f64>),
}

/// Backpropagates per-sample upstream gradients and sums their parameter
/// contributions in batch order.
///
/// The upstream gradients are the derivatives of the batch loss itself (the
/// losses in [`crate::losses`] already fold in their 1/N averaging), so the
/// result is the exact gradient of that batch loss.
pub fn backward_from_forward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[(&ForwardResult, &Upstream)],
) -> Result<GradVector, ModelError> {
    check_params(spec, params)?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (v, h1, h2) = (spec.hash_buckets, spec.hidden1, spec.hidden2);
    let layout = spec.layout();
    let p = params.as_slice();
    let w2 = &p[layout.w2.clone()];
    let w3 = &p[layout.w3.clone()];

    let mut grad = vec![0.0; p.len()];
    let mut d_embed = vec![0.0; h2];
    let mut d_z2 = vec![0.0; h2];
    let mut d_z1 = vec![0.0; h1];

    for (fwd, upstream) in batch {
        let embedding = &fwd.embedding;
        let hidden1 = &fwd.cache.hidden1;

        match upstream {
            Upstream::Logits(d_logits) => {
                for k in 0..h2 {
                    d_embed[k] = (0..NUM_CLASSES).map(|c| w3[c * h2 + k] * d_logits[c]).sum();
                }
                let gw3 = &mut grad[layout.w3.clone()];
                for c in 0..NUM_CLASSES {
                    for k in 0..h2 {
                        gw3[c * h2 + k] += d_logits[c] * embedding[k];
                    }
                }
                let gb3 = &mut grad[layout.b3.clone()];
                for c in 0..NUM_CLASSES {
                    gb3[c] += d_logits[c];
                }
            }
            Upstream::Embedding(d) => {
                if d.len() != h2 {
                    return Err(ModelError::UpstreamDim {
                        expected: h2,
                        found: d.len(),
                    });
                }
                d_embed.copy_from_slice(d);
            }
        }

        for k in 0..h2 {
            d_z2[k] = d_embed[k] * (1.0 - embedding[k] * embedding[k]);
        }
        {
            let gw2 = &mut grad[layout.w2.clone()];
            for k in 0..h2 {
                let row = &mut gw2[k * h1..(k + 1) * h1];
                for (g, a) in row.iter_mut().zip(hidden1) {
                    *g += d_z2[k] * a;
                }
            }
        }
        {
            let gb2 = &mut grad[layout.b2.clone()];
            for k in 0..h2 {
                gb2[k] += d_z2[k];
            }
        }

        for h in 0..h1 {
            let back: f64 = (0..h2).map(|k| w2[k * h1 + h] * d_z2[k]).sum();
            d_z1[h] = back * (1.0 - hidden1[h] * hidden1[h]);
        }
        {
            let gw1 = &mut grad[layout.w1.clone()];
            for h in 0..h1 {
                let row = &mut gw1[h * v..(h + 1) * v];
                for &(i, x) in &fwd.cache.input {
                    row[i] += d_z1[h] * x;
                }
            }
        }
        let gb1 = &mut grad[layout.b1.clone()];
        for h in 0..h1 {
            gb1[h] += d_z1[h];
        }
    }

    Ok(GradVector(grad))
}

/// Like [`backward_from_forward`], recomputing the forward pass for each
/// sample.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[(&FeatureVector, Upstream)],
) -> Result<GradVector, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let forwards = batch
        .iter()
        .map(|(x, _)| forward(spec, params, x))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<_> = forwards.iter().zip(batch.iter().map(|(_, u)| u)).collect();
    backward_from_forward(spec, params, &pairs)
}
