//! ERM, SCL-ERM, Fish and SCL-Fish over the classifier in [`crate::model`],
//! plus the gradient-inner-product diagnostics.
//!
//! All randomness comes from ChaCha8 streams of `TrainConfig::seed`:
//! stream 1 shuffles data and platform order, stream 2 reshuffles the
//! contrastive pool, stream 3 draws diagnostic minibatches. Keeping them
//! apart means switching the contrastive step or the diagnostics on or off
//! never perturbs the data order.

mod cosine;
mod erm;
mod fish;
mod gip;
mod objective;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedPlatform, Sample};
use crate::losses::LossError;
use crate::model::{init_params, ModelError, ModelSpec, ParamVector};

pub use cosine::{
    builtin_toy, cosine_convergence_experiment, CosinePoint, LogisticToy, QuadraticToy, ScaledToy, ToyProblem,
    BUILTIN_TOYS,
};
pub use erm::{erm_epoch, scl_erm_epoch};
pub use fish::{fish_epoch, fish_inner_loop, fish_meta_update, fish_step, scl_fish_epoch, scl_fish_step, DomainBatchSchedule};
pub use gip::{gip, gip_linear};
pub use fish::StepOutcome;
pub use objective::{ce_gradient, scl_gradient};

const DATA_STREAM: u64 = 1;
const SCL_STREAM: u64 = 2;
const DIAG_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training platforms")]
    NoPlatforms,
    #[error("platform `{0}` has no samples")]
    EmptyPlatform(String),
    #[error("need at least {needed} gradients, got {got}")]
    TooFewGradients { needed: usize, got: usize },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss or parameters at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error("degenerate toy problem: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Erm,
    SclErm,
    Fish,
    SclFish,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Erm, Algorithm::SclErm, Algorithm::Fish, Algorithm::SclFish];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Erm => "erm",
            Algorithm::SclErm => "scl-erm",
            Algorithm::Fish => "fish",
            Algorithm::SclFish => "scl-fish",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected erm, scl-erm, fish or scl-fish)"))
    }
}

/// Direction of the Fish meta step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaSign {
    /// θ ← θ + ε(θ̃ − θ): step toward the inner-loop result.
    Toward,
    /// θ ← θ − ε(θ̃ − θ): step away from it.
    Away,
}

impl FromStr for MetaSign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toward" | "+" => Ok(MetaSign::Toward),
            "away" | "-" => Ok(MetaSign::Away),
            _ => Err(format!("unknown meta sign `{s}` (expected toward or away)")),
        }
    }
}

impl fmt::Display for MetaSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaSign::Toward => "toward",
            MetaSign::Away => "away",
        })
    }
}

/// Scalars shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// α: SGD step for ERM and for the Fish inner loop.
    pub inner_lr: f64,
    /// ε: Fish meta step.
    pub meta_lr: f64,
    /// α′: step for contrastive updates.
    pub scl_lr: f64,
    /// τ.
    pub temperature: f64,
    /// γ: only scales the reported IDGM penalty; no update uses it.
    pub gip_scale: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub meta_sign: MetaSign,
    /// Record Ĝ over per-platform diagnostic minibatches each iteration.
    pub trace_gip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.05,
            meta_lr: 0.05,
            scl_lr: 0.05,
            temperature: 0.05,
            gip_scale: 0.0,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            meta_sign: MetaSign::Toward,
            trace_gip: false,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters of the original BERT fine-tuning recipe (Adam there;
    /// plain SGD here).
    pub fn reference_preset() -> Self {
        Self {
            inner_lr: 5e-6,
            meta_lr: 0.05,
            scl_lr: 5e-6,
            temperature: 0.05,
            batch_size: 8,
            epochs: 10,
            ..Self::default()
        }
    }

    /// Learning rates may be zero (degenerate runs are useful for
    /// checking equivalences); the temperature must be positive.
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("inner_lr", self.inner_lr),
            ("meta_lr", self.meta_lr),
            ("scl_lr", self.scl_lr),
            ("gip_scale", self.gip_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub epoch: usize,
    /// Cross-entropy per platform minibatch; ERM steps report the mixed
    /// minibatch under `"pooled"`.
    pub platform_losses: BTreeMap<String, f64>,
    /// Mean contrastive loss over this iteration's contrastive minibatches.
    pub scl_loss: Option<f64>,
    pub gip_hat: Option<f64>,
    /// γ·Ĝ/(S(S−1)).
    pub idgm_penalty: Option<f64>,
}

/// θ plus everything needed to continue a run deterministically.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub spec: ModelSpec,
    pub params: ParamVector,
    /// Outer iterations completed (SGD minibatches for the ERM family).
    pub step: u64,
    pub epoch: usize,
    /// Mean cross-entropy of each finished epoch.
    pub epoch_losses: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    data_rng: ChaCha8Rng,
    scl_rng: ChaCha8Rng,
    diag_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TrainState {
    /// Fresh parameters from [`init_params`] with the config seed.
    pub fn new(spec: ModelSpec, cfg: &TrainConfig) -> Self {
        Self::with_params(spec, init_params(&spec, cfg.seed), cfg)
    }

    pub fn with_params(spec: ModelSpec, params: ParamVector, cfg: &TrainConfig) -> Self {
        Self {
            spec,
            params,
            step: 0,
            epoch: 0,
            epoch_losses: Vec::new(),
            trace: Vec::new(),
            data_rng: stream(cfg.seed, DATA_STREAM),
            scl_rng: stream(cfg.seed, SCL_STREAM),
            diag_rng: stream(cfg.seed, DIAG_STREAM),
        }
    }

    /// Ĝ over one random minibatch per platform at the current θ, drawn
    /// from the diagnostic stream.
    fn diagnose(
        &mut self,
        platforms: &[EncodedPlatform],
        cfg: &TrainConfig,
    ) -> Result<(Option<f64>, Option<f64>), TrainError> {
        if !cfg.trace_gip || platforms.len() < 2 {
            return Ok((None, None));
        }
        let mut grads = Vec::with_capacity(platforms.len());
        for p in platforms {
            let k = cfg.batch_size.min(p.len());
            let batch: Vec<&Sample> = index::sample(&mut self.diag_rng, p.len(), k)
                .into_iter()
                .map(|i| &p.samples[i])
                .collect();
            grads.push(ce_gradient(&self.spec, &self.params, &batch)?.1);
        }
        let hat = gip_linear(&grads)?;
        let s = grads.len() as f64;
        Ok((Some(hat), Some(cfg.gip_scale * hat / (s * (s - 1.0)))))
    }
}

/// Result of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: u64,
    pub mean_loss: f64,
}

/// Drives one of the four algorithms over a fixed set of training platforms.
pub struct Trainer<'a> {
    algorithm: Algorithm,
    cfg: TrainConfig,
    platforms: &'a [EncodedPlatform],
    state: TrainState,
    schedule: DomainBatchSchedule,
}

impl<'a> Trainer<'a> {
    pub fn new(
        algorithm: Algorithm,
        spec: ModelSpec,
        cfg: TrainConfig,
        platforms: &'a [EncodedPlatform],
    ) -> Result<Self, TrainError> {
        let state = TrainState::new(spec, &cfg);
        Self::resume(algorithm, cfg, platforms, state)
    }

    pub fn resume(
        algorithm: Algorithm,
        cfg: TrainConfig,
        platforms: &'a [EncodedPlatform],
        state: TrainState,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        state.spec.validate()?;
        let schedule = DomainBatchSchedule::new(platforms)?;
        Ok(Self {
            algorithm,
            cfg,
            platforms,
            state,
            schedule,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState {
        &mut self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn run_epoch(&mut self) -> Result<EpochSummary, TrainError> {
        let before = self.state.step;
        match self.algorithm {
            Algorithm::Erm => erm_epoch(&mut self.state, self.platforms, &self.cfg)?,
            Algorithm::SclErm => scl_erm_epoch(&mut self.state, self.platforms, &self.cfg)?,
            Algorithm::Fish => fish_epoch(&mut self.state, &mut self.schedule, self.platforms, &self.cfg)?,
            Algorithm::SclFish => scl_fish_epoch(&mut self.state, &mut self.schedule, self.platforms, &self.cfg)?,
        }
        Ok(EpochSummary {
            epoch: self.state.epoch,
            iterations: self.state.step - before,
            mean_loss: *self.state.epoch_losses.last().expect("epoch recorded"),
        })
    }

    /// Runs every configured epoch.
    pub fn run(mut self) -> Result<TrainState, TrainError> {
        for _ in 0..self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(self.state)
    }
}

fn check_platforms(platforms: &[EncodedPlatform]) -> Result<(), TrainError> {
    if platforms.is_empty() {
        return Err(TrainError::NoPlatforms);
    }
    if let Some(p) = platforms.iter().find(|p| p.is_empty()) {
        return Err(TrainError::EmptyPlatform(p.platform.clone()));
    }
    Ok(())
}
