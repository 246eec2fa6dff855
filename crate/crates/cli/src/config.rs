//! Run configuration files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use comcts_core::reflection::DEFAULT_REFLECTION_RATIO;
use comcts_core::sim::BenchSpec;
use comcts_core::{PolicyDescriptor, PromptSet, SearchConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    pub generate: Option<PathBuf>,
    pub evaluate: Option<PathBuf>,
    pub reflect: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoPaths {
    pub questions: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn default_workers() -> usize {
    1
}

/// Everything `search` and `build-dataset` need, as one TOML document.
/// Relative paths resolve against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub search: SearchConfig,
    pub ensemble: Vec<PolicyDescriptor>,
    #[serde(default)]
    pub prompts: PromptPaths,
    #[serde(default)]
    pub io: IoPaths,
    /// Questions searched in parallel.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Backend calls in flight per question; defaults to the ensemble size.
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub reflection_ratio: Option<f64>,
    /// Store wall-clock time in records. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.prompts.generate,
            &mut cfg.prompts.evaluate,
            &mut cfg.prompts.reflect,
            &mut cfg.io.questions,
            &mut cfg.io.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.ensemble.is_empty() {
            return invalid("ensemble: at least one model is required".into());
        }
        let mut names = BTreeSet::new();
        for d in &self.ensemble {
            d.validate().map_err(|e| ConfigError::Invalid(format!("ensemble: {e}")))?;
            if !names.insert(d.name.as_str()) {
                return invalid(format!("ensemble: duplicate model name {:?}", d.name));
            }
        }
        if self.workers == 0 {
            return invalid("workers must be positive".into());
        }
        if self.max_in_flight == Some(0) {
            return invalid("max_in_flight must be positive".into());
        }
        if let Some(r) = self.reflection_ratio {
            validate_ratio(r)?;
        }
        Ok(())
    }

    pub fn reflection_ratio(&self) -> f64 {
        self.reflection_ratio.unwrap_or(DEFAULT_REFLECTION_RATIO)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
            .unwrap_or(self.ensemble.len() * self.search.candidates_per_model as usize)
            .max(1)
    }

    pub fn prompt_set(&self) -> Result<PromptSet, ConfigError> {
        let read = |p: &Option<PathBuf>| -> Result<Option<String>, ConfigError> {
            p.as_ref()
                .map(|path| {
                    std::fs::read_to_string(path)
                        .map_err(|source| ConfigError::Io { path: path.clone(), source })
                })
                .transpose()
        };
        let mut set = PromptSet::default();
        if let Some(t) = read(&self.prompts.generate)? {
            set.generate = t;
        }
        if let Some(t) = read(&self.prompts.evaluate)? {
            set.evaluate = t;
        }
        if let Some(t) = read(&self.prompts.reflect)? {
            set.reflect = t.trim().to_string();
        }
        Ok(set)
    }
}

pub fn validate_ratio(ratio: f64) -> Result<(), ConfigError> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("reflection ratio {ratio} must be in (0, 1]")))
    }
}

pub fn load_bench_spec(path: &Path) -> Result<BenchSpec, ConfigError> {
    let spec: BenchSpec = parse_toml(path)?;
    spec.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if spec.ensemble.is_empty() {
        return Err(ConfigError::Invalid("ensemble: at least one model is required".into()));
    }
    if spec.methods.is_empty() {
        return Err(ConfigError::Invalid("methods: nothing to run".into()));
    }
    Ok(spec)
}

fn parse_toml<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.message().to_string(),
    })
}
