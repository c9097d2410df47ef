use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fusion::FusionParams;
use crate::icrefine::RefineConfig;
use crate::jhfilter::FilterConfig;
use crate::pmstereo::PatchMatchConfig;
use crate::texseg::SegConfig;

/// Environment variable that overrides `[pipeline] rng_seed`.
pub const SEED_ENV: &str = "TSAR_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Stage toggles and run-wide settings (`[pipeline]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub enable_jhf: bool,
    pub enable_icr: bool,
    pub enable_ts: bool,
    /// Image downsampling factor: 1, 2 or 4.
    pub downsample: usize,
    /// Master seed; every stage derives its streams from it.
    pub rng_seed: u64,
    /// For synthetic scenes, take the PatchMatch depth range from ground
    /// truth (with a 10% margin) instead of `[patchmatch]`.
    pub auto_depth_range: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            enable_jhf: true,
            enable_icr: true,
            enable_ts: true,
            downsample: 2,
            rng_seed: 0,
            auto_depth_range: true,
        }
    }
}

/// Inputs and outputs (`[io]`). Exactly one of `scene` and `input_dir` is
/// needed to run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Name of a built-in synthetic scene.
    pub scene: Option<String>,
    /// Directory holding `cameras.txt` and the images it names.
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(rename = "pipeline")]
    pub run: RunConfig,
    pub io: IoConfig,
    pub patchmatch: PatchMatchConfig,
    pub filter: FilterConfig,
    pub refine: RefineConfig,
    pub segmentation: SegConfig,
    pub fusion: FusionParams,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

impl PipelineConfig {
    /// Parses TOML text: one table per stage (`[pipeline]`, `[io]`,
    /// `[patchmatch]`, `[filter]`, `[refine]`, `[segmentation]`,
    /// `[fusion]`). Missing keys keep their defaults; unknown ones fail.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            let msg = e.message().to_string();
            match msg.strip_prefix("unknown field").and_then(backticked) {
                Some(key) => ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                },
                None => ConfigError::Parse { line, msg },
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if ![1, 2, 4].contains(&self.run.downsample) {
            return Err(ConfigError::Invalid(format!(
                "downsample must be 1, 2 or 4, got {}",
                self.run.downsample
            )));
        }
        if self.io.scene.is_some() && self.io.input_dir.is_some() {
            return Err(ConfigError::Invalid("set only one of scene and input_dir".into()));
        }
        self.patchmatch.validate().map_err(|e| invalid(&e))?;
        self.filter.validate().map_err(|e| invalid(&e))?;
        self.refine.validate().map_err(|e| invalid(&e))?;
        self.segmentation.validate().map_err(|e| invalid(&e))?;
        self.fusion.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    /// Applies [`SEED_ENV`] if set.
    pub fn with_env_overrides(mut self) -> Result<Self, ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.run.rng_seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not a u64")))?;
        }
        Ok(self)
    }

    pub fn patchmatch_config(&self) -> PatchMatchConfig {
        PatchMatchConfig {
            rng_seed: self.run.rng_seed,
            ..self.patchmatch.clone()
        }
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            rng_seed: self.run.rng_seed,
            ..self.refine.clone()
        }
    }

    /// SHA-256 over every parameter that affects the outputs. Output
    /// location is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.io.output_dir = None;
        let json = serde_json::to_vec(&c).expect("configuration serializes to JSON");
        hex::encode(Sha256::digest(json))
    }
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    PipelineConfig::from_toml(&text)
}
