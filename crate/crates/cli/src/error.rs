use std::io;
use std::path::PathBuf;

use sclfish::checkpoint::CheckpointError;
use sclfish::data::DataError;
use sclfish::eval::EvalError;
use sclfish::model::ModelSpec;
use sclfish::trainers::TrainError;
use thiserror::Error;

use crate::config::ConfigError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Other = 1,
    Config = 2,
    Data = 3,
    NonFinite = 4,
}

fn spec_text(s: &ModelSpec) -> String {
    format!("hash_buckets={} hidden1={} hidden2={}", s.hash_buckets, s.hidden1, s.hidden2)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {}: {source}", path.display())]
    ReadConfig {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Dataset(DataError),
    #[error("data file {} does not match the manifest (expected {expected}, found {found})", path.display())]
    DataMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint holds {} but the config asks for {}", spec_text(.checkpoint), spec_text(.config))]
    SpecMismatch { checkpoint: ModelSpec, config: ModelSpec },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn class(&self) -> ExitClass {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::ReadConfig { .. } | CliError::Manifest { .. } => {
                ExitClass::Config
            }
            CliError::Data { .. }
            | CliError::Dataset(_)
            | CliError::DataMismatch { .. }
            | CliError::Checkpoint(_)
            | CliError::SpecMismatch { .. } => ExitClass::Data,
            CliError::Train(e) => match e {
                TrainError::NonFinite { .. } => ExitClass::NonFinite,
                TrainError::InvalidConfig(_) => ExitClass::Config,
                TrainError::NoPlatforms | TrainError::EmptyPlatform(_) => ExitClass::Data,
                _ => ExitClass::Other,
            },
            CliError::Eval(EvalError::Data(_)) => ExitClass::Data,
            CliError::Eval(_) | CliError::Write { .. } | CliError::Json(_) => ExitClass::Other,
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.class() as u8
    }
}
