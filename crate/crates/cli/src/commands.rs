//! One function per subcommand. Each resolves its config, does its work and
//! writes primary output to the supplied stdout.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sclfish::checkpoint::{load_params, save_params};
use sclfish::data::{
    fnv1a64, generate_synthetic, make_splits, parse_jsonl, write_jsonl, DataError, EncodedPlatform, PlatformDataset,
    Role, Sample, SplitPlan, PROTOCOL_TRAIN_PLATFORMS, PROTOCOL_VALIDATION_PLATFORM,
};
use sclfish::eval::{evaluate, evaluate_platform, export_embeddings, EvalMode};
use sclfish::model::{ModelSpec, ParamVector};
use sclfish::trainers::{
    builtin_toy, ce_gradient, cosine_convergence_experiment, gip, gip_linear, Algorithm, CosinePoint, TrainError,
    Trainer, BUILTIN_TOYS,
};

use crate::config::{parse_pairs, set_synth, synth_from_text, ConfigError, ModeKind, RoleSelection, RunConfig};
use crate::{CliError, RunArgs, SynthArgs};

const MODEL_KEYS: [&str; 3] = ["hash_buckets", "hidden1", "hidden2"];

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Config after file, `--set` and flags, plus the model-shape keys that
/// were given explicitly.
struct Resolved {
    cfg: RunConfig,
    explicit_model: Vec<&'static str>,
}

fn model_key(key: &str) -> Option<&'static str> {
    MODEL_KEYS.into_iter().find(|k| *k == key)
}

fn split_override(text: &str) -> Result<(&str, &str), CliError> {
    text.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{text}`")))
}

fn resolve(args: &RunArgs, extra: &[(&str, String)]) -> Result<Resolved, CliError> {
    let (mut cfg, mut explicit_model): (RunConfig, Vec<&'static str>) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
                path: path.clone(),
                source,
            })?;
            let explicit = parse_pairs(&text)?.iter().filter_map(|(_, k, _)| model_key(k)).collect();
            (RunConfig::from_text(&text)?, explicit)
        }
        None => (RunConfig::desk(), Vec::new()),
    };
    for o in &args.overrides {
        let (k, v) = split_override(o)?;
        explicit_model.extend(model_key(k));
        cfg.set(k, v)?;
    }
    for (k, v) in args.flag_pairs().iter().map(|(k, v)| (*k, v)).chain(extra.iter().map(|(k, v)| (*k, v))) {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(Resolved { cfg, explicit_model })
}

fn required<'a, T>(value: &'a Option<T>, key: &str, command: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{command} needs `{key}` (config key or --{})", key.replace('_', "-"))))
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Write {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

/// Identity of the data file a run consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub path: String,
    pub bytes: u64,
    pub fnv1a64: String,
}

struct LoadedData {
    datasets: Vec<PlatformDataset>,
    fingerprint: DataFingerprint,
}

fn load_data(path: &Path) -> Result<LoadedData, CliError> {
    let bytes = fs::read(path).map_err(|source| {
        CliError::Dataset(DataError::Io {
            path: path.to_owned(),
            source,
        })
    })?;
    let fingerprint = DataFingerprint {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
    };
    let text = String::from_utf8(bytes).map_err(|e| {
        let valid = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        CliError::Data {
            path: path.to_owned(),
            source: DataError::Malformed {
                line: valid.iter().filter(|&&b| b == b'\n').count() + 1,
                message: "invalid UTF-8".into(),
            },
        }
    })?;
    let datasets = parse_jsonl(&text).map_err(|source| CliError::Data {
        path: path.to_owned(),
        source,
    })?;
    Ok(LoadedData { datasets, fingerprint })
}

/// Unset train platforms select the cross-platform protocol (including its
/// validation platform); unset test platforms mean every unassigned one.
fn resolve_split(cfg: &RunConfig, datasets: &[PlatformDataset]) -> Result<SplitPlan, CliError> {
    let train: Vec<String> = match &cfg.train_platforms {
        Some(t) => t.clone(),
        None => PROTOCOL_TRAIN_PLATFORMS.iter().map(|s| (*s).to_owned()).collect(),
    };
    let validation = cfg
        .val_platform
        .clone()
        .or_else(|| cfg.train_platforms.is_none().then(|| PROTOCOL_VALIDATION_PLATFORM.to_owned()));
    let test: Vec<String> = match &cfg.test_platforms {
        Some(t) => t.clone(),
        None => datasets
            .iter()
            .map(|d| d.platform.clone())
            .filter(|p| !train.contains(p) && validation.as_ref() != Some(p))
            .collect(),
    };
    make_splits(datasets, &train, validation.as_deref(), &test).map_err(CliError::Dataset)
}

fn select<'a>(
    cfg: &RunConfig,
    datasets: &'a [PlatformDataset],
    role: RoleSelection,
) -> Result<Vec<&'a PlatformDataset>, CliError> {
    let role = match role {
        RoleSelection::All => return Ok(datasets.iter().collect()),
        RoleSelection::Train => Role::Train,
        RoleSelection::Validation => Role::Validation,
        RoleSelection::Test => Role::Test,
    };
    let chosen = resolve_split(cfg, datasets)?.select(datasets, role);
    if chosen.is_empty() {
        return Err(CliError::Usage(format!("no platform holds the {role} role")));
    }
    Ok(chosen)
}

fn load_model(r: &Resolved, command: &str) -> Result<(ParamVector, ModelSpec), CliError> {
    let path = required(&r.cfg.checkpoint, "checkpoint", command)?;
    let (params, spec) = load_params(path)?;
    let field = |key: &str, s: &ModelSpec| match key {
        "hash_buckets" => s.hash_buckets,
        "hidden1" => s.hidden1,
        _ => s.hidden2,
    };
    if r.explicit_model.iter().any(|k| field(k, &spec) != field(k, &r.cfg.model)) {
        return Err(CliError::SpecMismatch {
            checkpoint: spec,
            config: r.cfg.model,
        });
    }
    Ok((params, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: u64,
    pub mean_loss: f64,
    pub validation_accuracy: f64,
    pub validation_macro_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u64,
    pub total_seconds: f64,
}

/// Everything needed to repeat a training run; `timings` and each epoch's
/// `seconds` are the only fields that vary between repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Canonical config text, as in `config.txt`.
    pub config: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub data: DataFingerprint,
    pub split: SplitPlan,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters are in the best checkpoint.
    pub selected_epoch: usize,
    pub selected_validation_macro_f1: f64,
    pub final_validation_macro_f1: f64,
    pub timings: Timings,
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Manifest {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn train(args: &RunArgs, manifest: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match manifest {
        None => train_with(resolve(args, &[])?.cfg, None, stdout),
        Some(path) => {
            if args.config.is_some() || !args.overrides.is_empty() || args.flag_pairs().iter().any(|(k, _)| *k != "out")
            {
                return Err(CliError::Usage("--manifest accepts no other option than --out".into()));
            }
            let recorded = read_manifest(path)?;
            let mut cfg = RunConfig::from_text(&recorded.config)?;
            if let Some(out) = &args.out {
                cfg.set("out", out)?;
            }
            cfg.validate()?;
            train_with(cfg, Some(recorded.data), stdout)
        }
    }
}

fn train_with(mut cfg: RunConfig, expect: Option<DataFingerprint>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let data_path = required(&cfg.data, "data", "train")?.clone();
    let out_dir = required(&cfg.out, "out", "train")?.clone();
    let data = load_data(&data_path)?;
    if let Some(expect) = expect {
        if (expect.bytes, &expect.fnv1a64) != (data.fingerprint.bytes, &data.fingerprint.fnv1a64) {
            return Err(CliError::DataMismatch {
                path: data_path,
                expected: format!("{} bytes, fnv1a64 {}", expect.bytes, expect.fnv1a64),
                found: format!("{} bytes, fnv1a64 {}", data.fingerprint.bytes, data.fingerprint.fnv1a64),
            });
        }
    }
    cfg.data = Some(fs::canonicalize(&data_path).unwrap_or(data_path));

    let plan = resolve_split(&cfg, &data.datasets)?;
    let val_name = plan
        .validation
        .clone()
        .ok_or_else(|| CliError::Usage("train needs a validation platform (val_platform)".into()))?;
    let validation = plan.select(&data.datasets, Role::Validation)[0];
    let spec = cfg.model;
    let platforms: Vec<EncodedPlatform> = plan
        .select(&data.datasets, Role::Train)
        .iter()
        .map(|d| d.encode(spec.hash_buckets))
        .collect();
    if platforms.is_empty() {
        return Err(CliError::Usage("no training platforms".into()));
    }
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Write {
        path: out_dir.clone(),
        source,
    })?;

    let started = SystemTime::now();
    let clock = Instant::now();
    let mut trainer = Trainer::new(cfg.algorithm, spec, cfg.train.clone(), &platforms)?;
    let mut best: Option<(f64, usize, ParamVector)> = None;
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let t0 = Instant::now();
        let summary = trainer.run_epoch()?;
        let params = &trainer.state().params;
        let m = evaluate_platform(&spec, params, validation, EvalMode::Full)?;
        if best.as_ref().is_none_or(|(f1, _, _)| m.macro_f1 > *f1) {
            best = Some((m.macro_f1, summary.epoch, params.clone()));
        }
        writeln!(
            stdout,
            "epoch {} iterations {} loss {:.6} {val_name} macro-F1 {:.4}",
            summary.epoch, summary.iterations, summary.mean_loss, m.macro_f1
        )
        .map_err(stdout_err)?;
        epochs.push(EpochRecord {
            epoch: summary.epoch,
            iterations: summary.iterations,
            mean_loss: summary.mean_loss,
            validation_accuracy: m.accuracy,
            validation_macro_f1: m.macro_f1,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let state = trainer.into_state();
    let (best_f1, best_epoch, best_params) = best.expect("at least one epoch");

    save_params(&best_params, &spec, &out_dir.join(BEST_CHECKPOINT))?;
    save_params(&state.params, &spec, &out_dir.join(FINAL_CHECKPOINT))?;
    let mut trace = String::new();
    for r in &state.trace {
        trace.push_str(&serde_json::to_string(r)?);
        trace.push('\n');
    }
    write_file(&out_dir.join(TRACE_FILE), trace.as_bytes())?;
    let rendered = cfg.render();
    write_file(&out_dir.join(CONFIG_FILE), rendered.as_bytes())?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: rendered,
        seed: cfg.train.seed,
        algorithm: cfg.algorithm,
        data: data.fingerprint,
        split: plan,
        final_validation_macro_f1: epochs.last().map_or(f64::NAN, |e| e.validation_macro_f1),
        epochs,
        selected_epoch: best_epoch,
        selected_validation_macro_f1: best_f1,
        timings: Timings {
            started_unix_ms: started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            total_seconds: clock.elapsed().as_secs_f64(),
        },
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    writeln!(stdout, "selected epoch {best_epoch} ({val_name} macro-F1 {best_f1:.4})").map_err(stdout_err)?;
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    stdout.write_all(json.as_bytes()).map_err(stdout_err)?;
    if let Some(path) = out {
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

pub fn eval(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let r = resolve(args, &[])?;
    let (params, spec) = load_model(&r, "eval")?;
    let data = load_data(required(&r.cfg.data, "data", "eval")?)?;
    let platforms = select(&r.cfg, &data.datasets, r.cfg.eval_role)?;
    let mode = match r.cfg.eval_mode {
        ModeKind::Full => EvalMode::Full,
        ModeKind::Balanced => EvalMode::Balanced(r.cfg.balanced_seed()),
    };
    let report = evaluate(&spec, &params, &platforms, mode)?;
    emit_json(&report, r.cfg.out.as_ref(), stdout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GipPlatform {
    pub platform: String,
    pub n: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GipPair {
    pub a: String,
    pub b: String,
    pub dot: f64,
}

/// `g_hat` = ‖ΣG‖² − Σ‖G‖²; `gip` = g_hat / (S(S−1)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GipReport {
    pub platforms: Vec<GipPlatform>,
    pub pairs: Vec<GipPair>,
    pub g_hat: f64,
    pub gip: f64,
}

pub fn diagnose_gip(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let r = resolve(args, &[])?;
    let too_few = |n: usize| CliError::Usage(format!("gip needs at least 2 training platforms, got {n}"));
    if let Some(t) = r.cfg.train_platforms.as_ref().filter(|t| t.len() < 2) {
        return Err(too_few(t.len()));
    }
    let (params, spec) = load_model(&r, "diagnose gip")?;
    let data = load_data(required(&r.cfg.data, "data", "diagnose gip")?)?;
    let chosen = resolve_split(&r.cfg, &data.datasets)?.select(&data.datasets, Role::Train);
    if chosen.len() < 2 {
        return Err(too_few(chosen.len()));
    }
    let mut rows = Vec::with_capacity(chosen.len());
    let mut grads = Vec::with_capacity(chosen.len());
    for d in chosen {
        if d.is_empty() {
            return Err(TrainError::EmptyPlatform(d.platform.clone()).into());
        }
        let enc = d.encode(spec.hash_buckets);
        let batch: Vec<&Sample> = enc.samples.iter().collect();
        let (loss, g) = ce_gradient(&spec, &params, &batch)?;
        rows.push(GipPlatform {
            platform: d.platform.clone(),
            n: d.len(),
            loss,
            grad_norm_sq: g.norm_sq(),
        });
        grads.push(g);
    }
    let mut pairs = Vec::new();
    for i in 0..grads.len() {
        for j in i + 1..grads.len() {
            pairs.push(GipPair {
                a: rows[i].platform.clone(),
                b: rows[j].platform.clone(),
                dot: grads[i].dot(&grads[j]),
            });
        }
    }
    let report = GipReport {
        platforms: rows,
        pairs,
        g_hat: gip_linear(&grads)?,
        gip: gip(&grads)?,
    };
    emit_json(&report, r.cfg.out.as_ref(), stdout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub toy: String,
    pub points: Vec<CosinePoint>,
}

pub fn diagnose_cosine(
    args: &RunArgs,
    toy: Option<&str>,
    alphas: Option<&str>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(t) = toy {
        extra.push(("cosine_toy", t.to_owned()));
    }
    if let Some(a) = alphas {
        extra.push(("cosine_alphas", a.to_owned()));
    }
    let r = resolve(args, &extra)?;
    let problem = builtin_toy(&r.cfg.cosine_toy).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown toy `{}` (expected one of {})",
            r.cfg.cosine_toy,
            BUILTIN_TOYS.join(", ")
        ))
    })?;
    let points = cosine_convergence_experiment(problem.as_ref(), &r.cfg.cosine_alphas)?;
    let report = CosineReport {
        toy: r.cfg.cosine_toy.clone(),
        points,
    };
    emit_json(&report, r.cfg.out.as_ref(), stdout)
}

pub fn synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => synth_from_text(&fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
            path: path.clone(),
            source,
        })?)?,
        None => Default::default(),
    };
    for o in &args.overrides {
        let (k, v) = split_override(o)?;
        set_synth(&mut cfg, k, v)?;
    }
    if let Some(seed) = &args.seed {
        set_synth(&mut cfg, "seed", seed)?;
    }
    let datasets = generate_synthetic(&cfg).map_err(|e| match e {
        DataError::InvalidSynthConfig(m) => CliError::Config(ConfigError::Invalid(m)),
        other => CliError::Dataset(other),
    })?;
    let mut buf = Vec::new();
    write_jsonl(&datasets, &mut buf).map_err(stdout_err)?;
    match &args.out {
        Some(path) => {
            write_file(path, &buf)?;
            let n: usize = datasets.iter().map(PlatformDataset::len).sum();
            writeln!(stdout, "wrote {n} examples on {} platforms to {}", datasets.len(), path.display())
                .map_err(stdout_err)
        }
        None => stdout.write_all(&buf).map_err(stdout_err),
    }
}

pub fn export(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let r = resolve(args, &[])?;
    let (params, spec) = load_model(&r, "export-embeddings")?;
    let data = load_data(required(&r.cfg.data, "data", "export-embeddings")?)?;
    let out = required(&r.cfg.out, "out", "export-embeddings")?;
    let platforms = select(&r.cfg, &data.datasets, r.cfg.eval_role)?;
    export_embeddings(&spec, &params, &platforms, out)?;
    let n: usize = platforms.iter().map(|d| d.len()).sum();
    writeln!(
        stdout,
        "wrote {n} embeddings of dimension {} to {}",
        spec.embedding_dim(),
        out.display()
    )
    .map_err(stdout_err)
}
