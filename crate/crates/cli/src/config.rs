//! Run configuration: one TOML or JSON file, with secrets and the endpoint
//! taken from the environment.

use std::path::{Path, PathBuf};

use apexsql_core::exec::CompareMode;
use apexsql_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_API_KEY: &str = "APEX_API_KEY";
pub const ENV_BASE_URL: &str = "APEX_BASE_URL";
pub const ENV_MODEL: &str = "APEX_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// `tasks.json` holding task records directly.
    #[default]
    Tasks,
    /// Question file plus one SQLite file per database id.
    Bird,
    /// One folder per task with a knowledge markdown file.
    Spider,
}

impl DatasetKind {
    pub fn default_mode(self) -> CompareMode {
        match self {
            DatasetKind::Spider => CompareMode::Relaxed,
            DatasetKind::Tasks | DatasetKind::Bird => CompareMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Task file (`tasks`, `bird`) or task root folder (`spider`).
    pub path: Option<PathBuf>,
    /// Root of `<db_id>/<db_id>.sqlite` files for `bird`; the folder holding
    /// `<db_id>.sqlite` files for `spider`.
    pub db_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Scripted answers, no network.
    #[default]
    Replay,
    /// OpenAI-compatible chat endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key.
    pub key_env: String,
    /// Replay script file, or folder of `<question_id>.json` scripts.
    pub replay: Option<PathBuf>,
    pub request_timeout_secs: u64,
    pub attempts: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Replay,
            endpoint: None,
            model: None,
            key_env: ENV_API_KEY.to_string(),
            replay: None,
            request_timeout_secs: 300,
            attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    /// Comparison mode; the dataset's default when absent.
    pub mode: Option<CompareMode>,
    pub output_dir: PathBuf,
    /// Tasks processed at once.
    pub task_parallelism: usize,
    pub dialect: String,
    /// Folder of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
    pub tips_file: Option<PathBuf>,
    pub rules_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            dataset: DatasetConfig::default(),
            pipeline: PipelineConfig::default(),
            mode: None,
            output_dir: PathBuf::from("runs"),
            task_parallelism: 4,
            dialect: "sqlite".to_string(),
            prompts_dir: None,
            tips_file: None,
            rules_file: None,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    /// Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.path);
        resolve(base, &mut self.dataset.db_root);
        resolve(base, &mut self.backend.replay);
        resolve(base, &mut self.prompts_dir);
        resolve(base, &mut self.tips_file);
        resolve(base, &mut self.rules_file);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Endpoint and model from the environment win over the file.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            if !url.is_empty() {
                self.backend.endpoint = Some(url);
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                self.backend.model = Some(model);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.backend.kind {
            BackendKind::Replay => {
                if self.backend.replay.is_none() {
                    return Err(ConfigError::Invalid("the replay backend needs a script (--replay)".into()));
                }
            }
            BackendKind::Http => {
                if self.backend.replay.is_some() {
                    return Err(ConfigError::Invalid("a replay script cannot be combined with the http backend".into()));
                }
                if self.backend.endpoint.is_none() || self.backend.model.is_none() {
                    return Err(ConfigError::Invalid(format!(
                        "the http backend needs an endpoint and a model ({ENV_BASE_URL}, {ENV_MODEL})"
                    )));
                }
            }
        }
        if self.pipeline.generation.samples == 0 {
            return Err(ConfigError::Invalid("samples must be at least 1".into()));
        }
        if self.task_parallelism == 0 {
            return Err(ConfigError::Invalid("task_parallelism must be at least 1".into()));
        }
        if self.dialect != "sqlite" {
            return Err(ConfigError::Invalid(format!("unsupported dialect {:?}", self.dialect)));
        }
        Ok(())
    }

    pub fn mode(&self) -> CompareMode {
        self.mode.unwrap_or_else(|| self.dataset.kind.default_mode())
    }

    /// Snapshot written into each run folder. The key itself is never
    /// stored, only the variable it comes from.
    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}
