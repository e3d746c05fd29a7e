//! Synthetic multi-platform corpora.
//!
//! Every document mixes three kinds of tokens:
//!
//! * task words, shared by all platforms, drawn with a label-dependent bias
//!   (the domain-invariant signal);
//! * background words private to the platform and independent of the label;
//! * at most one spurious word (repeated `spurious_repeats` times) whose
//!   presence has point-biserial correlation `rho` with the label.
//!
//! Training platforms own their spurious vocabulary. Held-out platforms own
//! none: they draw spurious tokens from the union of the training platforms'
//! vocabularies, so a model that leaned on those tokens during training is
//! exposed when the correlation flips.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Example, PlatformDataset, ABUSIVE, NORMAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlatform {
    pub name: String,
    /// Target correlation between spurious-token presence and the abusive label.
    pub rho: f64,
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Shared task words; the first half leans abusive, the second normal.
    pub task_vocab: usize,
    /// Probability that a task token comes from its label's half rather
    /// than uniformly from the whole task vocabulary.
    pub task_signal: f64,
    pub spurious_vocab: usize,
    pub spurious_repeats: usize,
    pub background_vocab: usize,
    /// Fraction of non-spurious tokens that are platform background words.
    pub background_rate: f64,
    pub words_per_doc: usize,
    pub abusive_rate: f64,
    pub samples_per_platform: usize,
    pub platforms: Vec<SynthPlatform>,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Three training platforms at ρ = +0.9 and one held-out platform at
    /// ρ = −0.9, 2000 documents each.
    fn default() -> Self {
        let mut platforms: Vec<SynthPlatform> = ["synth-a", "synth-b", "synth-c"]
            .iter()
            .map(|n| SynthPlatform {
                name: (*n).into(),
                rho: 0.9,
                held_out: false,
            })
            .collect();
        platforms.push(SynthPlatform {
            name: "synth-heldout".into(),
            rho: -0.9,
            held_out: true,
        });
        Self {
            task_vocab: 40,
            task_signal: 0.5,
            spurious_vocab: 4,
            spurious_repeats: 2,
            background_vocab: 30,
            background_rate: 0.3,
            words_per_doc: 12,
            abusive_rate: 0.5,
            samples_per_platform: 2000,
            platforms,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSynthConfig(m));
        if self.task_vocab < 2 {
            return bad("task_vocab must be at least 2".into());
        }
        for (name, p) in [
            ("task_signal", self.task_signal),
            ("background_rate", self.background_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.abusive_rate > 0.0 && self.abusive_rate < 1.0) {
            return bad(format!("abusive_rate must lie in (0, 1), got {}", self.abusive_rate));
        }
        if self.spurious_vocab == 0 || self.spurious_repeats == 0 {
            return bad("spurious_vocab and spurious_repeats must be positive".into());
        }
        if self.background_vocab == 0 && self.background_rate > 0.0 {
            return bad("background_rate > 0 needs background_vocab > 0".into());
        }
        if self.words_per_doc == 0 || self.samples_per_platform == 0 {
            return bad("words_per_doc and samples_per_platform must be positive".into());
        }
        if self.platforms.is_empty() {
            return bad("no platforms".into());
        }
        if !self.platforms.iter().any(|p| !p.held_out) {
            return bad("at least one platform must be a training platform".into());
        }
        for (i, p) in self.platforms.iter().enumerate() {
            if p.name.is_empty() {
                return bad("platform names must be non-empty".into());
            }
            if self.platforms[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("duplicate platform `{}`", p.name));
            }
            if !(-1.0..=1.0).contains(&p.rho) {
                return bad(format!("rho for `{}` must lie in [-1, 1], got {}", p.name, p.rho));
            }
        }
        Ok(())
    }
}

/// P(spurious present | abusive), P(spurious present | normal) such that the
/// presence indicator has correlation exactly `rho` with the label.
///
/// For ρ ≥ 0 the presence marginal equals the abusive rate π, giving
/// a − b = ρ with a = π + (1 − π)ρ. For ρ < 0 the marginal is 1 − π.
pub(crate) fn presence_probs(rho: f64, abusive_rate: f64) -> (f64, f64) {
    let pi = abusive_rate;
    if rho >= 0.0 {
        (pi + (1.0 - pi) * rho, pi * (1.0 - rho))
    } else {
        ((1.0 - pi) * (1.0 + rho), 1.0 - pi * (1.0 + rho))
    }
}

fn task_word(i: usize) -> String {
    format!("task{i}")
}

fn spurious_word(platform: usize, j: usize) -> String {
    format!("p{platform}spur{j}")
}

fn background_word(platform: usize, j: usize) -> String {
    format!("p{platform}bg{j}")
}

/// Generates one dataset per configured platform, in config order.
/// Each platform draws from its own ChaCha8 stream of `seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<PlatformDataset>, DataError> {
    cfg.validate()?;
    let train_spurious: Vec<String> = cfg
        .platforms
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.held_out)
        .flat_map(|(k, _)| (0..cfg.spurious_vocab).map(move |j| spurious_word(k, j)))
        .collect();
    let half = cfg.task_vocab / 2;

    let mut out = Vec::with_capacity(cfg.platforms.len());
    for (k, platform) in cfg.platforms.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let own_spurious: Vec<String> = (0..cfg.spurious_vocab).map(|j| spurious_word(k, j)).collect();
        let spurious_pool = if platform.held_out {
            &train_spurious
        } else {
            &own_spurious
        };
        let (p_abusive, p_normal) = presence_probs(platform.rho, cfg.abusive_rate);

        let mut examples = Vec::with_capacity(cfg.samples_per_platform);
        for _ in 0..cfg.samples_per_platform {
            let label = if rng.gen_bool(cfg.abusive_rate) { ABUSIVE } else { NORMAL };
            let mut tokens = Vec::with_capacity(cfg.words_per_doc + cfg.spurious_repeats);
            for _ in 0..cfg.words_per_doc {
                if rng.gen_bool(cfg.background_rate) {
                    tokens.push(background_word(k, rng.gen_range(0..cfg.background_vocab)));
                } else if rng.gen_bool(cfg.task_signal) {
                    let i = if label == ABUSIVE {
                        rng.gen_range(0..half)
                    } else {
                        rng.gen_range(half..cfg.task_vocab)
                    };
                    tokens.push(task_word(i));
                } else {
                    tokens.push(task_word(rng.gen_range(0..cfg.task_vocab)));
                }
            }
            let p_present = if label == ABUSIVE { p_abusive } else { p_normal };
            if rng.gen_bool(p_present) {
                let word = spurious_pool.choose(&mut rng).expect("spurious pool is non-empty");
                tokens.extend(std::iter::repeat_n(word.clone(), cfg.spurious_repeats));
            }
            tokens.shuffle(&mut rng);
            examples.push(Example {
                text: tokens.join(" "),
                label,
                platform: platform.name.clone(),
            });
        }
        out.push(PlatformDataset {
            platform: platform.name.clone(),
            examples,
        });
    }
    Ok(out)
}
