//! Pipeline configuration: defaults, key=value config files, seeds.
//!
//! Every stage derives its RNG seed from one master seed, the stage name,
//! and the module key, so whole-pipeline runs are reproducible from a
//! single number while stages stay decorrelated. Individual stage seeds
//! can still be pinned in the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cnn::{CnnHyperparameters, LossKind};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Directories holding local repository clones (or any YAML trees).
    pub corpus_roots: Vec<PathBuf>,
    /// Repository metadata file for `mine`.
    pub metadata_path: Option<PathBuf>,
    /// Token files and datasets land here.
    pub data_dir: PathBuf,
    /// The model repository directory.
    pub model_dir: PathBuf,
    /// Explicit module selection; when unset the top `top_modules` by
    /// task count are used.
    pub module_allowlist: Option<Vec<String>>,
    pub top_modules: usize,
    /// Master seed; per-stage seeds derive from it unless pinned below.
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub mutation_seed: Option<u64>,
    pub embedding_seed: Option<u64>,
    pub cnn_seed: Option<u64>,
    /// Probability that a swapped body comes from another module.
    pub cross_fraction: f64,
    pub embedding: EmbeddingConfig,
    pub cnn: CnnHyperparameters,
    /// Decision threshold on p_consistent for detection verdicts.
    pub threshold: f64,
    /// Concurrent per-module training jobs.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_roots: Vec::new(),
            metadata_path: None,
            data_dir: PathBuf::from("data"),
            model_dir: PathBuf::from("models"),
            module_allowlist: None,
            top_modules: 10,
            seed: 7,
            split_seed: None,
            mutation_seed: None,
            embedding_seed: None,
            cnn_seed: None,
            cross_fraction: 0.5,
            embedding: EmbeddingConfig::default(),
            cnn: CnnHyperparameters::default(),
            threshold: 0.5,
            workers: 1,
        }
    }
}

/// Stable FNV-1a mix of the master seed, a stage name, and a module key.
pub fn derive_seed(master: u64, stage: &str, module_key: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in master.to_le_bytes() {
        mix(b);
    }
    for b in stage.bytes() {
        mix(b);
    }
    mix(0);
    for b in module_key.bytes() {
        mix(b);
    }
    hash
}

impl PipelineConfig {
    pub fn split_seed_for(&self, module_key: &str) -> u64 {
        derive_seed(self.split_seed.unwrap_or(self.seed), "split", module_key)
    }

    pub fn mutation_seed_for(&self, module_key: &str, split: &str) -> u64 {
        derive_seed(
            self.mutation_seed.unwrap_or(self.seed),
            &format!("mutate/{split}"),
            module_key,
        )
    }

    pub fn embedding_config_for(&self, module_key: &str) -> EmbeddingConfig {
        let mut config = self.embedding.clone();
        config.seed = derive_seed(
            self.embedding_seed.unwrap_or(self.seed),
            "embedding",
            module_key,
        );
        config
    }

    pub fn cnn_seed_for(&self, module_key: &str) -> u64 {
        derive_seed(self.cnn_seed.unwrap_or(self.seed), "cnn", module_key)
    }

    pub fn tokens_dir(&self) -> PathBuf {
        self.data_dir.join("tokens")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.data_dir.join("datasets")
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::BadConfig(format!("bad value for `{key}`: {what}"));
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "corpus_roots" => {
                self.corpus_roots = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect();
            }
            "metadata" => self.metadata_path = Some(PathBuf::from(value)),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "model_dir" => self.model_dir = PathBuf::from(value),
            "modules" => {
                self.module_allowlist = Some(
                    value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                );
            }
            "top_modules" => self.top_modules = parse!(usize),
            "seed" => self.seed = parse!(u64),
            "split_seed" => self.split_seed = Some(parse!(u64)),
            "mutation_seed" => self.mutation_seed = Some(parse!(u64)),
            "embedding_seed" => self.embedding_seed = Some(parse!(u64)),
            "cnn_seed" => self.cnn_seed = Some(parse!(u64)),
            "cross_fraction" => self.cross_fraction = parse!(f64),
            "threshold" => self.threshold = parse!(f64),
            "workers" => self.workers = parse!(usize),
            "embedding.vector_size" => self.embedding.vector_size = parse!(usize),
            "embedding.learning_rate" => self.embedding.learning_rate = parse!(f64),
            "embedding.min_word_frequency" => self.embedding.min_word_frequency = parse!(usize),
            "embedding.window" => self.embedding.window = parse!(usize),
            "embedding.epochs" => self.embedding.epochs = parse!(usize),
            "embedding.negative_samples" => self.embedding.negative_samples = parse!(usize),
            "cnn.conv_filters" => self.cnn.conv_filters = parse!(usize),
            "cnn.kernel_width" => self.cnn.kernel_width = parse!(usize),
            "cnn.pool_width" => self.cnn.pool_width = parse!(usize),
            "cnn.l2_lambda" => self.cnn.l2_lambda = parse!(f64),
            "cnn.dropout_rate" => self.cnn.dropout_rate = parse!(f64),
            "cnn.dense_units" => self.cnn.dense_units = parse!(usize),
            "cnn.learning_rate" => self.cnn.learning_rate = parse!(f64),
            "cnn.batch_size" => self.cnn.batch_size = parse!(usize),
            "cnn.epochs" => self.cnn.epochs = parse!(usize),
            "cnn.loss" => {
                self.cnn.loss = LossKind::parse(value)
                    .ok_or_else(|| bad("expected mean_absolute_error or cross_entropy"))?;
            }
            other => {
                return Err(Error::BadConfig(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cross_fraction) {
            return Err(Error::BadConfig(format!(
                "cross_fraction {} outside [0, 1]",
                self.cross_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::BadConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.workers == 0 {
            return Err(Error::BadConfig("workers must be >= 1".into()));
        }
        self.embedding.validate()
    }
}

/// Load a plain-text `key = value` config file over the defaults.
/// `#` starts a comment; blank lines are ignored.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = PipelineConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::BadConfig(format!(
                "{}:{}: expected `key = value`, found `{line}`",
                path.display(),
                idx + 1
            ))
        })?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| Error::BadConfig(format!("{}:{}: {e}", path.display(), idx + 1)))?;
    }
    config.validate()?;
    Ok(config)
}
