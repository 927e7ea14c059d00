//! Experiment configuration: a TOML file, `key=value` overrides, and the
//! output-root environment variable.

use std::fmt;
use std::path::{Path, PathBuf};

use ptdebias_core::encoder::Pooling;
use ptdebias_core::head::TaskKind;
use ptdebias_core::objectives::{DEFAULT_ALPHA, DEFAULT_TEMPERATURE};
use ptdebias_core::toy::ToyTaskConfig;
use ptdebias_core::train::{Method, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result, RunnerError};

/// Overrides the output root of every run.
pub const OUTPUT_ENV: &str = "PTDEBIAS_OUTPUT";
pub const DEFAULT_OUTPUT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    Stsb,
    Snli,
    Bios,
    ToySynthetic,
}

impl TaskName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Stsb => "stsb",
            TaskName::Snli => "snli",
            TaskName::Bios => "bios",
            TaskName::ToySynthetic => "toy-synthetic",
        }
    }

    /// Selection metric name reported for the dev set.
    pub fn dev_metric_name(self) -> &'static str {
        match self {
            TaskName::Stsb | TaskName::ToySynthetic => "spearman",
            TaskName::Snli | TaskName::Bios => "accuracy",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    /// Randomly initialized built-in encoder.
    Toy {
        layers: usize,
        hidden: usize,
        heads: usize,
        seed: u64,
    },
    /// Directory holding `backbone.safetensors` and `backbone.json`.
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// External counterfactual pairs (JSONL, augment output format).
    pub auxiliary: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub professions: Option<PathBuf>,
    pub gender_words: Option<PathBuf>,
    pub occupations: Option<PathBuf>,
    pub activities: Option<PathBuf>,
    pub article_exceptions: Option<PathBuf>,
    pub bios_classes: Option<PathBuf>,
    /// Pre-generated bias corpus (`genbench` output) used instead of
    /// generating one from the word lists.
    pub bias_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliSampling {
    pub fraction: f64,
    pub seed: u64,
    /// Score every instance instead of a stratified sample.
    pub full: bool,
}

impl Default for NliSampling {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            seed: 0,
            full: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub task: TaskName,
    pub method: Method,
    pub backbone: BackboneSpec,
    pub prompt_length: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub seeds: Vec<u64>,
    pub symmetric: bool,
    pub cda_in_task_loss: bool,
    pub reparam_hidden: Option<usize>,
    pub max_steps: Option<usize>,
    /// Score the bias benchmark after every epoch for the epoch series.
    pub probe_every_epoch: bool,
    /// Gender lexicon file; the built-in list when absent.
    pub lexicon: Option<PathBuf>,
    /// Gendered terms inserted into Bias-STS-B templates.
    pub gender_terms: (String, String),
    pub data: DataPaths,
    pub toy: ToyTaskConfig,
    pub nli_sampling: NliSampling,
    /// Output root; `PTDEBIAS_OUTPUT` wins when set.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            task: TaskName::ToySynthetic,
            method: Method::Co2pt,
            backbone: BackboneSpec::Toy {
                layers: 2,
                hidden: 32,
                heads: 4,
                seed: 0,
            },
            prompt_length: 20,
            temperature: DEFAULT_TEMPERATURE,
            alpha: DEFAULT_ALPHA,
            pooling: Pooling::Cls,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 30,
            max_len: 128,
            seeds: vec![0, 1, 2],
            symmetric: false,
            cda_in_task_loss: false,
            reparam_hidden: None,
            max_steps: None,
            probe_every_epoch: true,
            lexicon: None,
            gender_terms: ("man".into(), "woman".into()),
            data: DataPaths::default(),
            toy: ToyTaskConfig::default(),
            nli_sampling: NliSampling::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| RunnerError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| RunnerError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(RunnerError::Config("at least one seed is required".into()));
        }
        self.train_config(self.seeds[0], TaskKind::Regression).validate()?;
        if self.method.needs_auxiliary_pairs() && self.data.auxiliary.is_none() {
            return Err(RunnerError::Config(format!(
                "method {} needs data.auxiliary",
                self.method
            )));
        }
        if self.method.needs_sentence_pairs() && matches!(self.task, TaskName::Bios) {
            return Err(RunnerError::Config(format!(
                "method {} needs a sentence-pair task",
                self.method
            )));
        }
        if !(self.nli_sampling.fraction > 0.0 && self.nli_sampling.fraction <= 1.0) {
            return Err(RunnerError::Config("nli_sampling.fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Applies one `dotted.key=value` override. Values are parsed as TOML
    /// literals, falling back to plain strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| RunnerError::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| RunnerError::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| RunnerError::Config(format!("`{key}` does not name a table entry")))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value.clone());
                break;
            }
            node = table
                .entry((*part).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| RunnerError::Config(format!("override `{key}`: {e}")))?;
        self.validate()
    }

    /// Hex SHA-256 over the canonical JSON form, ignoring where output goes.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.output_dir = None;
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        hex_digest(&bytes)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn run_dir(&self) -> PathBuf {
        let label = self.name.clone().unwrap_or_else(|| format!("{}-{}", self.task, self.method));
        self.output_root().join(format!("{label}-{}", self.short_hash()))
    }

    pub fn train_config(&self, seed: u64, task: TaskKind) -> TrainConfig {
        TrainConfig {
            method: self.method,
            task,
            prompt_length: self.prompt_length,
            temperature: self.temperature,
            alpha: self.alpha,
            pooling: self.pooling,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_len: self.max_len,
            seed,
            symmetric: self.symmetric,
            cda_in_task_loss: self.cda_in_task_loss,
            reparam_hidden: self.reparam_hidden,
            max_steps: self.max_steps,
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
