//! Command-line surface: config file, corpus manifest, feature cache, and
//! the extract / train / convert / eval commands.

mod commands;
mod features;
mod manifest;

pub use commands::{
    cmd_convert, cmd_eval, cmd_extract, cmd_train, read_conditioning_dump, ConvertArgs,
    ConvertInput, ConvertOutcome, EvalArgs, ExtractSummary, TrainArgs,
    CONDITIONING_DUMP_HEADER,
};
pub use features::{content_hash, FeatureFile, FEATURE_HEADER};
pub use manifest::{Manifest, ManifestRecord};

use crate::dsp::DspConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Process exit codes: validation errors are the caller's fault, runtime
/// failures are ours.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub(crate) fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Model dims that live in the config file; the phoneme symbol count comes
/// from the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub speaker_dim: usize,
    pub phoneme_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { speaker_dim: 32, phoneme_dim: 64 }
    }
}

/// The single configuration file driving every command (TOML; unknown keys
/// are rejected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub inventory: PathBuf,
    #[serde(default)]
    pub dsp: DspConfig,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.dsp.validate().map_err(CliError::validation)?;
        cfg.train.validate().map_err(CliError::validation)?;
        if cfg.dsp.mel_bins != 80 {
            return Err(CliError::Validation(format!(
                "dsp.mel_bins must be 80 (the generator upsamples 5 rows by 16), got {}",
                cfg.dsp.mel_bins
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a config file, resolving `cache_dir` and `inventory` relative
    /// to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config '{}': {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.cache_dir.is_relative() {
                cfg.cache_dir = dir.join(&cfg.cache_dir);
            }
            if cfg.inventory.is_relative() {
                cfg.inventory = dir.join(&cfg.inventory);
            }
        }
        Ok(cfg)
    }
}
