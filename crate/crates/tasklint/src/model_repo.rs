//! On-disk model repository: one subdirectory per module holding the
//! embedding model, CNN weights, a JSON manifest, and the metrics report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::{self, CnnHyperparameters, CnnModel, PaddingSpec};
use crate::corpus::write_atomic;
use crate::embedding::{self, EmbeddingConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::metrics::{render_table, render_table_tsv, MetricsReport};

pub const EMBEDDING_FILE: &str = "embedding.txt";
pub const WEIGHTS_FILE: &str = "cnn.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_TXT_FILE: &str = "metrics.txt";
pub const METRICS_TSV_FILE: &str = "metrics.tsv";

/// Seeds that produced a module's artifacts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedRecord {
    pub split: u64,
    pub mutation_train: u64,
    pub mutation_test: u64,
    pub mutation_eval: u64,
    pub embedding: u64,
    pub cnn: u64,
}

/// Split/mutation sizes recorded for auditability.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub eval_tasks: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub eval_examples: usize,
    pub skipped_tasks: usize,
}

/// Everything needed to audit or reload one module's model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleManifest {
    pub format_version: u32,
    pub module_key: String,
    /// Hex prefix of the weight file's SHA-256.
    pub model_version: String,
    pub seeds: SeedRecord,
    pub cross_fraction: f64,
    pub embedding_config: EmbeddingConfig,
    pub cnn_hyperparameters: CnnHyperparameters,
    pub padding: PaddingSpec,
    pub counts: DatasetCounts,
    pub metrics: MetricsReport,
}

/// A module model loaded back from the repository.
#[derive(Debug, Clone)]
pub struct LoadedModule {
    pub manifest: ModuleManifest,
    pub embedding: EmbeddingModel,
    pub cnn: CnnModel,
}

pub fn module_dir(repo_dir: &Path, module_key: &str) -> PathBuf {
    repo_dir.join(module_key)
}

fn weights_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect::<String>()
}

/// Persist one module's artifacts; returns the manifest with the computed
/// model version.
pub fn save_module(
    repo_dir: &Path,
    embedding_model: &EmbeddingModel,
    cnn_model: &CnnModel,
    seeds: SeedRecord,
    cross_fraction: f64,
    counts: DatasetCounts,
    metrics: MetricsReport,
) -> Result<ModuleManifest> {
    let dir = module_dir(repo_dir, &cnn_model.module_key);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    embedding::save_model(embedding_model, &dir.join(EMBEDDING_FILE))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    cnn::save_model(cnn_model, &weights_path)?;
    let weight_bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;

    let manifest = ModuleManifest {
        format_version: 1,
        module_key: cnn_model.module_key.clone(),
        model_version: weights_hash(&weight_bytes),
        seeds,
        cross_fraction,
        embedding_config: embedding_model.config.clone(),
        cnn_hyperparameters: cnn_model.hp.clone(),
        padding: cnn_model.padding.clone(),
        counts,
        metrics: metrics.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;

    let reports = [metrics];
    write_atomic(&dir.join(METRICS_TXT_FILE), render_table(&reports).as_bytes())?;
    write_atomic(&dir.join(METRICS_TSV_FILE), render_table_tsv(&reports).as_bytes())?;
    Ok(manifest)
}

/// Load one module's artifacts.
pub fn load_module(repo_dir: &Path, module_key: &str) -> Result<LoadedModule> {
    let dir = module_dir(repo_dir, module_key);
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::ModelMissing {
            dir: repo_dir.to_path_buf(),
            module_key: module_key.to_string(),
        });
    }
    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ModuleManifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::MalformedFile {
            path: manifest_path.clone(),
            what: "manifest",
            message: e.to_string(),
        })?;
    let embedding_model = embedding::load_model(&dir.join(EMBEDDING_FILE))?;
    let cnn_model = cnn::load_model(&dir.join(WEIGHTS_FILE))?;
    Ok(LoadedModule {
        manifest,
        embedding: embedding_model,
        cnn: cnn_model,
    })
}

/// Modules present in the repository, lexicographically sorted.
pub fn list_modules(repo_dir: &Path) -> Result<Vec<String>> {
    if !repo_dir.is_dir() {
        return Err(Error::UnreadableRoot(repo_dir.to_path_buf()));
    }
    let mut modules = Vec::new();
    for entry in fs::read_dir(repo_dir).map_err(|e| Error::io(repo_dir, e))? {
        let entry = entry.map_err(|e| Error::io(repo_dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                modules.push(name.to_string());
            }
        }
    }
    modules.sort();
    Ok(modules)
}
