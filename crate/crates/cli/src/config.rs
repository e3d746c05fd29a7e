//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment that runs to the end of the
//! line; blank lines are ignored; keys may appear at most once per file.
//! Lists are comma separated. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sclfish::data::{SynthConfig, SynthPlatform};
use sclfish::model::ModelSpec;
use sclfish::trainers::{Algorithm, MetaSign, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("unknown preset `{0}` (expected desk or paper)")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

/// Parsed assignments in file order, with 1-based line numbers.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: content.to_owned(),
            });
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line,
                text: content.to_owned(),
            });
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_owned(),
            });
        }
        out.push((line, key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_owned(),
        message: format!("`{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_owned(),
            message: format!("`{value}` is not a boolean"),
        }),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn optional(value: &str) -> Option<String> {
    match value {
        "" | "none" => None,
        v => Some(v.to_owned()),
    }
}

/// Which platforms a command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleSelection {
    Train,
    Validation,
    Test,
    All,
}

impl FromStr for RoleSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown role `{s}` (expected train, validation, test or all)")),
        }
    }
}

impl RoleSelection {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Full,
    Balanced,
}

impl FromStr for ModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "balanced" => Ok(Self::Balanced),
            _ => Err(format!("unknown mode `{s}` (expected full or balanced)")),
        }
    }
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Balanced => "balanced",
        }
    }
}

/// Everything a run needs; see README for each key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// `None` selects the built-in cross-platform protocol.
    pub train_platforms: Option<Vec<String>>,
    pub val_platform: Option<String>,
    /// `None` means every platform without another role.
    pub test_platforms: Option<Vec<String>>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_mode: ModeKind,
    /// `None` reuses `seed`.
    pub balanced_seed: Option<u64>,
    pub eval_role: RoleSelection,
    pub cosine_toy: String,
    pub cosine_alphas: Vec<f64>,
}

pub const RUN_KEYS: [&str; 26] = [
    "preset",
    "algorithm",
    "hash_buckets",
    "hidden1",
    "hidden2",
    "inner_lr",
    "meta_lr",
    "scl_lr",
    "temperature",
    "gip_scale",
    "batch_size",
    "epochs",
    "seed",
    "meta_sign",
    "trace_gip",
    "train_platforms",
    "val_platform",
    "test_platforms",
    "data",
    "out",
    "checkpoint",
    "eval_mode",
    "balanced_seed",
    "eval_role",
    "cosine_toy",
    "cosine_alphas",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            algorithm: Algorithm::SclFish,
            model: ModelSpec {
                hash_buckets: 1 << 15,
                hidden1: 64,
                hidden2: 32,
            },
            train: TrainConfig::default(),
            train_platforms: None,
            val_platform: None,
            test_platforms: None,
            data: None,
            out: None,
            checkpoint: None,
            eval_mode: ModeKind::Full,
            balanced_seed: None,
            eval_role: RoleSelection::Test,
            cosine_toy: "logistic".into(),
            cosine_alphas: vec![1e-2, 1e-3, 1e-4],
        }
    }

    /// Desk model with the original fine-tuning hyperparameters.
    pub fn reference() -> Self {
        Self {
            train: TrainConfig::reference_preset(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::reference()),
            other => Err(ConfigError::UnknownPreset(other.to_owned())),
        }
    }

    /// Parses a whole file: a `preset` key (wherever it appears) picks the
    /// starting point, then every other key overrides it.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.iter().find(|(_, k, _)| k == "preset") {
            Some((_, _, v)) => Self::preset(v)?,
            None => Self::desk(),
        };
        for (_, key, value) in pairs.iter().filter(|(_, k, _)| k != "preset") {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "preset" => {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    message: "presets can only be chosen in a config file".into(),
                })
            }
            "algorithm" => self.algorithm = parse(key, value)?,
            "hash_buckets" => self.model.hash_buckets = parse(key, value)?,
            "hidden1" => self.model.hidden1 = parse(key, value)?,
            "hidden2" => self.model.hidden2 = parse(key, value)?,
            "inner_lr" => t.inner_lr = parse(key, value)?,
            "meta_lr" => t.meta_lr = parse(key, value)?,
            "scl_lr" => t.scl_lr = parse(key, value)?,
            "temperature" => t.temperature = parse(key, value)?,
            "gip_scale" => t.gip_scale = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "meta_sign" => t.meta_sign = parse::<MetaSign>(key, value)?,
            "trace_gip" => t.trace_gip = parse_bool(key, value)?,
            "train_platforms" => {
                self.train_platforms = match value {
                    "" | "protocol" => None,
                    v => Some(parse_list(v)),
                }
            }
            "val_platform" => self.val_platform = optional(value),
            "test_platforms" => self.test_platforms = Some(parse_list(value)).filter(|l| !l.is_empty() && value != "none"),
            "data" => self.data = optional(value).map(PathBuf::from),
            "out" => self.out = optional(value).map(PathBuf::from),
            "checkpoint" => self.checkpoint = optional(value).map(PathBuf::from),
            "eval_mode" => self.eval_mode = parse(key, value)?,
            "balanced_seed" => {
                self.balanced_seed = match value {
                    "" | "seed" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval_role" => self.eval_role = parse(key, value)?,
            "cosine_toy" => self.cosine_toy = value.to_owned(),
            "cosine_alphas" => {
                self.cosine_alphas = parse_list(value)
                    .iter()
                    .map(|v| parse::<f64>(key, v))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        Ok(())
    }

    /// Checks ranges that parsing alone cannot.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.train_platforms.as_ref().is_some_and(Vec::is_empty) {
            return Err(ConfigError::Invalid("train_platforms is empty".into()));
        }
        if let Some(a) = self.cosine_alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(ConfigError::Invalid(format!("cosine_alphas must be positive, got {a}")));
        }
        Ok(())
    }

    pub fn balanced_seed(&self) -> u64 {
        self.balanced_seed.unwrap_or(self.train.seed)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn render(&self) -> String {
        let t = &self.train;
        let list = |v: &Option<Vec<String>>, none: &str| v.as_ref().map_or(none.to_owned(), |v| v.join(","));
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_owned(), |p| p.display().to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("algorithm", self.algorithm.to_string());
        kv("hash_buckets", self.model.hash_buckets.to_string());
        kv("hidden1", self.model.hidden1.to_string());
        kv("hidden2", self.model.hidden2.to_string());
        kv("inner_lr", t.inner_lr.to_string());
        kv("meta_lr", t.meta_lr.to_string());
        kv("scl_lr", t.scl_lr.to_string());
        kv("temperature", t.temperature.to_string());
        kv("gip_scale", t.gip_scale.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("meta_sign", t.meta_sign.to_string());
        kv("trace_gip", t.trace_gip.to_string());
        kv("train_platforms", list(&self.train_platforms, "protocol"));
        kv("val_platform", self.val_platform.clone().unwrap_or_else(|| "none".into()));
        kv("test_platforms", list(&self.test_platforms, "none"));
        kv("data", path(&self.data));
        kv("out", path(&self.out));
        kv("checkpoint", path(&self.checkpoint));
        kv("eval_mode", self.eval_mode.name().into());
        kv(
            "balanced_seed",
            self.balanced_seed.map_or("seed".into(), |s| s.to_string()),
        );
        kv("eval_role", self.eval_role.name().into());
        kv("cosine_toy", self.cosine_toy.clone());
        kv(
            "cosine_alphas",
            self.cosine_alphas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        s
    }
}

pub const SYNTH_KEYS: [&str; 11] = [
    "task_vocab",
    "task_signal",
    "spurious_vocab",
    "spurious_repeats",
    "background_vocab",
    "background_rate",
    "words_per_doc",
    "abusive_rate",
    "samples_per_platform",
    "seed",
    "platforms",
];

/// `name:rho` or `name:rho:held_out`.
fn parse_platform(spec: &str) -> Result<SynthPlatform, ConfigError> {
    let bad = |m: &str| ConfigError::BadValue {
        key: "platforms".into(),
        message: format!("`{spec}`: {m}"),
    };
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let (name, rho, held_out) = match parts.as_slice() {
        [name, rho] => (*name, *rho, false),
        [name, rho, "held_out"] => (*name, *rho, true),
        _ => return Err(bad("expected name:rho or name:rho:held_out")),
    };
    if name.is_empty() {
        return Err(bad("empty platform name"));
    }
    let rho = rho.parse().map_err(|_| bad("rho is not a number"))?;
    Ok(SynthPlatform {
        name: name.to_owned(),
        rho,
        held_out,
    })
}

pub fn synth_from_text(text: &str) -> Result<SynthConfig, ConfigError> {
    let mut cfg = SynthConfig::default();
    for (_, key, value) in parse_pairs(text)? {
        set_synth(&mut cfg, &key, &value)?;
    }
    Ok(cfg)
}

pub fn set_synth(cfg: &mut SynthConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "task_vocab" => cfg.task_vocab = parse(key, value)?,
        "task_signal" => cfg.task_signal = parse(key, value)?,
        "spurious_vocab" => cfg.spurious_vocab = parse(key, value)?,
        "spurious_repeats" => cfg.spurious_repeats = parse(key, value)?,
        "background_vocab" => cfg.background_vocab = parse(key, value)?,
        "background_rate" => cfg.background_rate = parse(key, value)?,
        "words_per_doc" => cfg.words_per_doc = parse(key, value)?,
        "abusive_rate" => cfg.abusive_rate = parse(key, value)?,
        "samples_per_platform" => cfg.samples_per_platform = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "platforms" => {
            cfg.platforms = parse_list(value)
                .iter()
                .map(|p| parse_platform(p))
                .collect::<Result<_, _>>()?
        }
        other => return Err(ConfigError::UnknownKey(other.to_owned())),
    }
    Ok(())
}
