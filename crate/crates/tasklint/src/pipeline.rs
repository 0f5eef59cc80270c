//! End-to-end orchestration: extract, mutate, train, evaluate, detect,
//! mine. Each stage reads and writes the plain-text artifacts under the
//! configured data and model directories, so every run is inspectable
//! and reproducible from its seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;

use crate::ast::{self, SourceLocation, TokenStream};
use crate::cnn::{self, prepare_input};
use crate::config::PipelineConfig;
use crate::corpus::{self, write_atomic, CorpusManifest};
use crate::dataset::{self, Label, LabeledExample, Split, SplitPlan, SplitSets};
use crate::embedding;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model_repo::{self, DatasetCounts, LoadedModule, SeedRecord};
use crate::textio;
use crate::tokenize::{self, NormalizedExample};

/// Per-module task counts and the modules selected for training.
#[derive(Debug, Clone)]
pub struct ExtractSummary {
    /// All modules seen, sorted by count descending then name.
    pub module_counts: Vec<(String, usize)>,
    /// Modules whose token files were written, lexicographic.
    pub selected_modules: Vec<String>,
    pub total_tasks: usize,
    pub files_parsed: usize,
    pub files_failed: usize,
    pub tasks_skipped: usize,
}

/// Parse every corpus file, normalize each task, and write per-module
/// token files for the selected modules (the allowlist, or the top N by
/// task count).
pub fn run_extract(config: &PipelineConfig) -> Result<ExtractSummary> {
    if config.corpus_roots.is_empty() {
        return Err(Error::BadConfig("no corpus roots configured".into()));
    }
    let manifest = corpus::enumerate_task_files(&config.corpus_roots)?;
    let mut by_module: BTreeMap<String, Vec<NormalizedExample>> = BTreeMap::new();
    let mut files_parsed = 0usize;
    let mut files_failed = 0usize;
    let mut tasks_skipped = 0usize;
    let mut total_tasks = 0usize;

    for file in &manifest.yaml_files {
        let path = Path::new(&file.repo).join(&file.path);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(err) => {
                log::warn!("skipping unreadable file {}: {err}", path.display());
                files_failed += 1;
                continue;
            }
        };
        let outcome = match ast::parse_tasks(&text, &path) {
            Ok(outcome) => outcome,
            Err(err) => {
                log::warn!("skipping file with invalid yaml: {err}");
                files_failed += 1;
                continue;
            }
        };
        files_parsed += 1;
        tasks_skipped += outcome.skipped.len();
        for diag in &outcome.skipped {
            log::warn!("{}:{}: skipped task: {}", diag.path.display(), diag.line, diag.reason);
        }
        for task in &outcome.tasks {
            let stream = ast::serialize_preorder(&task.id, &ast::build_ast(task));
            let example = tokenize::normalize(&stream, &task.name, &task.module_key);
            by_module.entry(task.module_key.clone()).or_default().push(example);
            total_tasks += 1;
        }
    }
    if total_tasks == 0 {
        return Err(Error::EmptyCorpusRoots);
    }

    let mut module_counts: Vec<(String, usize)> = by_module
        .iter()
        .map(|(module, examples)| (module.clone(), examples.len()))
        .collect();
    module_counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut selected_modules: Vec<String> = match &config.module_allowlist {
        Some(allowlist) => allowlist
            .iter()
            .filter(|m| by_module.contains_key(*m))
            .cloned()
            .collect(),
        None => module_counts
            .iter()
            .take(config.top_modules)
            .map(|(module, _)| module.clone())
            .collect(),
    };
    selected_modules.sort();
    selected_modules.dedup();

    let tokens_dir = config.tokens_dir();
    if tokens_dir.is_dir() {
        fs::remove_dir_all(&tokens_dir).map_err(|e| Error::io(&tokens_dir, e))?;
    }
    for module in &selected_modules {
        write_token_file(&tokens_dir.join(format!("{module}.tsv")), &by_module[module])?;
    }

    Ok(ExtractSummary {
        module_counts,
        selected_modules,
        total_tasks,
        files_parsed,
        files_failed,
        tasks_skipped,
    })
}

fn write_token_file(path: &Path, examples: &[NormalizedExample]) -> Result<()> {
    let mut out = String::new();
    for example in examples {
        let name_stream = TokenStream {
            task_id: example.task_id.clone(),
            origin: ast::Origin::Name,
            tokens: example.name_tokens.clone(),
        };
        let body_stream = TokenStream {
            task_id: example.task_id.clone(),
            origin: ast::Origin::Body,
            tokens: example.body_tokens.clone(),
        };
        out.push_str(&ast::format_stream_line(&name_stream));
        out.push('\n');
        out.push_str(&ast::format_stream_line(&body_stream));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn read_token_file(path: &Path, module_key: &str) -> Result<Vec<NormalizedExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut pending_name: Option<TokenStream> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let stream = ast::parse_stream_line(&line).ok_or_else(|| Error::MalformedFile {
            path: path.to_path_buf(),
            what: "token",
            message: format!("line {}: unparseable stream line", idx + 1),
        })?;
        match stream.origin {
            ast::Origin::Name => pending_name = Some(stream),
            ast::Origin::Body => {
                let name = pending_name.take().ok_or_else(|| Error::MalformedFile {
                    path: path.to_path_buf(),
                    what: "token",
                    message: format!("line {}: body row without a name row", idx + 1),
                })?;
                if name.task_id != stream.task_id {
                    return Err(Error::MalformedFile {
                        path: path.to_path_buf(),
                        what: "token",
                        message: format!(
                            "line {}: name/body task ids differ ({} vs {})",
                            idx + 1,
                            name.task_id,
                            stream.task_id
                        ),
                    });
                }
                examples.push(NormalizedExample {
                    task_id: stream.task_id,
                    module_key: module_key.to_string(),
                    name_tokens: name.tokens,
                    body_tokens: stream.tokens,
                });
            }
        }
    }
    Ok(examples)
}

/// The full labeled dataset for one module, plus split bookkeeping.
#[derive(Debug, Clone)]
pub struct ModuleDatasets {
    pub module_key: String,
    /// Original (pre-mutation) examples per split.
    pub splits: SplitSets,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub eval: Vec<LabeledExample>,
    pub skipped_task_ids: Vec<String>,
    pub counts: DatasetCounts,
}

impl ModuleDatasets {
    pub fn labeled(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Eval => &self.eval,
        }
    }
}

/// Modules that could not be processed, with the reason.
pub type ModuleFailures = Vec<(String, String)>;

fn token_modules(config: &PipelineConfig) -> Result<Vec<String>> {
    let dir = config.tokens_dir();
    if !dir.is_dir() {
        return Err(Error::UnreadableRoot(dir));
    }
    let mut modules = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("tsv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                modules.push(stem.to_string());
            }
        }
    }
    modules.sort();
    if let Some(allowlist) = &config.module_allowlist {
        modules.retain(|m| allowlist.contains(m));
    }
    Ok(modules)
}

/// Split every module's examples, then mutate each split with donors
/// drawn from the same split only (same module and cross module pools).
pub fn build_datasets(config: &PipelineConfig) -> Result<(Vec<ModuleDatasets>, ModuleFailures)> {
    let modules = token_modules(config)?;
    let mut failures = ModuleFailures::new();
    let mut split_sets: BTreeMap<String, SplitSets> = BTreeMap::new();
    for module in &modules {
        let examples = read_token_file(
            &config.tokens_dir().join(format!("{module}.tsv")),
            module,
        )?;
        let plan = SplitPlan::new(module.clone(), config.split_seed_for(module));
        match dataset::split(&examples, &plan) {
            Ok(sets) => {
                split_sets.insert(module.clone(), sets);
            }
            Err(err) => failures.push((module.clone(), err.to_string())),
        }
    }

    let mut datasets = Vec::new();
    for (module, sets) in &split_sets {
        let mut per_split: BTreeMap<Split, dataset::MutationOutcome> = BTreeMap::new();
        let mut failed = None;
        for split in Split::all() {
            let own = sets.get(split);
            let cross: Vec<NormalizedExample> = split_sets
                .iter()
                .filter(|(other, _)| *other != module)
                .flat_map(|(_, other_sets)| other_sets.get(split).iter().cloned())
                .collect();
            match dataset::mutate(
                own,
                own,
                &cross,
                split,
                config.mutation_seed_for(module, split.as_str()),
                config.cross_fraction,
            ) {
                Ok(outcome) => {
                    per_split.insert(split, outcome);
                }
                Err(err) => {
                    failed = Some(err.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = failed {
            failures.push((module.clone(), reason));
            continue;
        }
        let train = per_split.remove(&Split::Train).expect("train split");
        let test = per_split.remove(&Split::Test).expect("test split");
        let eval = per_split.remove(&Split::Eval).expect("eval split");
        let mut skipped = train.skipped_task_ids;
        skipped.extend(test.skipped_task_ids);
        skipped.extend(eval.skipped_task_ids);
        let counts = DatasetCounts {
            train_tasks: sets.train.len(),
            test_tasks: sets.test.len(),
            eval_tasks: sets.eval.len(),
            train_examples: train.examples.len(),
            test_examples: test.examples.len(),
            eval_examples: eval.examples.len(),
            skipped_tasks: skipped.len(),
        };
        datasets.push(ModuleDatasets {
            module_key: module.clone(),
            splits: sets.clone(),
            train: train.examples,
            test: test.examples,
            eval: eval.examples,
            skipped_task_ids: skipped,
            counts,
        });
    }
    Ok((datasets, failures))
}

/// [`build_datasets`] plus dataset files on disk.
pub fn run_mutate(config: &PipelineConfig) -> Result<(Vec<ModuleDatasets>, ModuleFailures)> {
    let (datasets, failures) = build_datasets(config)?;
    let dir = config.datasets_dir();
    if dir.is_dir() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for module in &datasets {
        for split in Split::all() {
            dataset::write_dataset(&dir, &module.module_key, split, module.labeled(split))?;
        }
    }
    Ok((datasets, failures))
}

/// One trained module's outcome.
#[derive(Debug, Clone)]
pub struct TrainedModule {
    pub module_key: String,
    pub metrics: MetricsReport,
    pub model_version: String,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub trained: Vec<TrainedModule>,
    pub failed: ModuleFailures,
}

fn matrices_for(
    examples: &[LabeledExample],
    emb: &embedding::EmbeddingModel,
    padding: &cnn::PaddingSpec,
) -> (Vec<Array2<f64>>, Vec<Label>, Vec<String>) {
    let mut inputs = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    let mut ids = Vec::with_capacity(examples.len());
    for example in examples {
        inputs.push(prepare_input(&example.base, emb, padding));
        labels.push(example.label);
        ids.push(example.base.task_id.clone());
    }
    (inputs, labels, ids)
}

fn train_one_module(config: &PipelineConfig, data: &ModuleDatasets) -> Result<TrainedModule> {
    let module = &data.module_key;
    let started = Instant::now();

    // Embeddings and padding come from the training split only.
    let train_sequences: Vec<Vec<String>> =
        data.train.iter().map(|ex| ex.base.joint_sequence()).collect();
    let emb_config = config.embedding_config_for(module);
    let emb = embedding::train_cbow(&train_sequences, module, &emb_config)?;
    let padding = cnn::compute_padding(&train_sequences)?;

    let (train_inputs, train_labels, _) = matrices_for(&data.train, &emb, &padding);
    let (test_inputs, test_labels, _) = matrices_for(&data.test, &emb, &padding);
    let (eval_inputs, eval_labels, eval_ids) = matrices_for(&data.eval, &emb, &padding);

    let cnn_seed = config.cnn_seed_for(module);
    let model = cnn::train(
        module,
        &train_inputs,
        &train_labels,
        &test_inputs,
        &test_labels,
        &config.cnn,
        padding,
        cnn_seed,
    )?;

    let mut predictions = Vec::with_capacity(eval_inputs.len());
    for (input, task_id) in eval_inputs.iter().zip(&eval_ids) {
        predictions.push(model.predict(task_id, input)?);
    }
    let report = metrics::compute_metrics(module, &predictions, &eval_labels)?;

    let seeds = SeedRecord {
        split: config.split_seed_for(module),
        mutation_train: config.mutation_seed_for(module, Split::Train.as_str()),
        mutation_test: config.mutation_seed_for(module, Split::Test.as_str()),
        mutation_eval: config.mutation_seed_for(module, Split::Eval.as_str()),
        embedding: emb_config.seed,
        cnn: cnn_seed,
    };
    let manifest = model_repo::save_module(
        &config.model_dir,
        &emb,
        &model,
        seeds,
        config.cross_fraction,
        data.counts,
        report.clone(),
    )?;
    Ok(TrainedModule {
        module_key: module.clone(),
        metrics: report,
        model_version: manifest.model_version,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Split, mutate, train embeddings and classifiers, evaluate, and persist
/// artifacts for every selected module. Modules that fail preconditions
/// are skipped with a diagnostic; only a fully failed run is an error.
pub fn run_train(config: &PipelineConfig) -> Result<TrainSummary> {
    let (datasets, mut failures) = run_mutate(config)?;
    let mut summary = TrainSummary {
        trained: Vec::new(),
        failed: ModuleFailures::new(),
    };

    if config.workers <= 1 || datasets.len() <= 1 {
        for data in &datasets {
            match train_one_module(config, data) {
                Ok(trained) => summary.trained.push(trained),
                Err(err) => failures.push((data.module_key.clone(), err.to_string())),
            }
        }
    } else {
        let queue = Mutex::new(datasets.iter().collect::<Vec<_>>());
        let results = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(datasets.len()) {
                scope.spawn(|| loop {
                    let data = { queue.lock().expect("queue lock").pop() };
                    let Some(data) = data else { break };
                    let outcome = train_one_module(config, data);
                    results
                        .lock()
                        .expect("results lock")
                        .push((data.module_key.clone(), outcome));
                });
            }
        });
        let mut results = results.into_inner().expect("results");
        results.sort_by(|a, b| a.0.cmp(&b.0));
        for (module, outcome) in results {
            match outcome {
                Ok(trained) => summary.trained.push(trained),
                Err(err) => failures.push((module, err.to_string())),
            }
        }
    }

    for (module, reason) in &failures {
        log::warn!("module `{module}` skipped: {reason}");
    }
    summary.failed = failures;
    if summary.trained.is_empty() {
        return Err(Error::NoModelsTrained);
    }
    Ok(summary)
}

/// Re-evaluate every stored model on its eval split and render the
/// combined table.
pub fn run_evaluate(config: &PipelineConfig) -> Result<Vec<MetricsReport>> {
    let mut modules = model_repo::list_modules(&config.model_dir)?;
    if let Some(allowlist) = &config.module_allowlist {
        modules.retain(|m| allowlist.contains(m));
    }
    let mut reports = Vec::new();
    for module in &modules {
        let loaded = model_repo::load_module(&config.model_dir, module)?;
        let examples = dataset::read_dataset(&config.datasets_dir(), module, Split::Eval)?;
        let mut predictions = Vec::with_capacity(examples.len());
        let mut truths = Vec::with_capacity(examples.len());
        for example in &examples {
            let input = prepare_input(&example.base, &loaded.embedding, &loaded.cnn.padding);
            predictions.push(loaded.cnn.predict(&example.base.task_id, &input)?);
            truths.push(example.label);
        }
        reports.push(metrics::compute_metrics(module, &predictions, &truths)?);
    }
    write_atomic(
        &config.model_dir.join("metrics_table.txt"),
        metrics::render_table(&reports).as_bytes(),
    )?;
    write_atomic(
        &config.model_dir.join("metrics_table.tsv"),
        metrics::render_table_tsv(&reports).as_bytes(),
    )?;
    Ok(reports)
}

/// A scored task from `detect`.
#[derive(Debug, Clone)]
pub struct Finding {
    pub source: SourceLocation,
    pub task_name: String,
    pub module_key: String,
    pub p_inconsistent: f64,
    /// Inconsistent iff p_inconsistent exceeds the detection threshold.
    pub verdict: Label,
    pub model_version: String,
}

/// A task that was seen but not scored.
#[derive(Debug, Clone)]
pub struct SkipNote {
    pub source: SourceLocation,
    pub task_name: String,
    pub module_key: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct DetectReport {
    /// All scored tasks, sorted by p_inconsistent descending.
    pub findings: Vec<Finding>,
    pub skipped: Vec<SkipNote>,
    pub files_scanned: usize,
    pub files_failed: usize,
}

impl DetectReport {
    pub fn inconsistent_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.verdict == Label::Inconsistent)
            .count()
    }
}

/// Trained models loaded for inference.
pub struct Detector {
    models: BTreeMap<String, LoadedModule>,
    threshold: f64,
}

impl Detector {
    /// Load every module model from the repository directory.
    pub fn load(model_dir: &Path, threshold: f64) -> Result<Self> {
        let mut models = BTreeMap::new();
        for module in model_repo::list_modules(model_dir)? {
            models.insert(module.clone(), model_repo::load_module(model_dir, &module)?);
        }
        Ok(Self { models, threshold })
    }

    pub fn module_count(&self) -> usize {
        self.models.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Scan one YAML document text. Tasks whose module has no model are
    /// reported as skipped with a `no-model` note.
    pub fn scan_yaml(&self, yaml_text: &str, source_path: &Path) -> Result<DetectReport> {
        let outcome = ast::parse_tasks(yaml_text, source_path)?;
        let mut report = DetectReport {
            files_scanned: 1,
            ..DetectReport::default()
        };
        for diag in outcome.skipped {
            report.skipped.push(SkipNote {
                source: SourceLocation {
                    path: diag.path,
                    line: diag.line,
                },
                task_name: String::new(),
                module_key: String::new(),
                reason: diag.reason,
            });
        }
        for task in &outcome.tasks {
            let Some(loaded) = self.models.get(&task.module_key) else {
                report.skipped.push(SkipNote {
                    source: task.source.clone(),
                    task_name: task.name.clone(),
                    module_key: task.module_key.clone(),
                    reason: "no-model".into(),
                });
                continue;
            };
            let stream = ast::serialize_preorder(&task.id, &ast::build_ast(task));
            let example = tokenize::normalize(&stream, &task.name, &task.module_key);
            let input = prepare_input(&example, &loaded.embedding, &loaded.cnn.padding);
            let prediction =
                loaded
                    .cnn
                    .predict_with_threshold(&task.id, &input, self.threshold)?;
            report.findings.push(Finding {
                source: task.source.clone(),
                task_name: task.name.clone(),
                module_key: task.module_key.clone(),
                p_inconsistent: prediction.p_inconsistent,
                verdict: prediction.predicted_label,
                model_version: loaded.manifest.model_version.clone(),
            });
        }
        Ok(report)
    }

    /// Scan one playbook or task file.
    pub fn scan_file(&self, path: &Path) -> Result<DetectReport> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.scan_yaml(&text, path)
    }
}

fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        b.p_inconsistent
            .partial_cmp(&a.p_inconsistent)
            .expect("finite probabilities")
            .then_with(|| a.source.path.cmp(&b.source.path))
            .then_with(|| a.source.line.cmp(&b.source.line))
    });
}

/// Scan files (or directories of YAML files), merging everything into one
/// report sorted by p_inconsistent. Unreadable files are logged per file
/// and counted, not fatal.
pub fn run_detect(config: &PipelineConfig, paths: &[PathBuf]) -> Result<DetectReport> {
    let detector = Detector::load(&config.model_dir, config.threshold)?;
    let mut all_files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let manifest = corpus::enumerate_task_files(std::slice::from_ref(path))?;
            for file in manifest.yaml_files {
                all_files.push(Path::new(&file.repo).join(file.path));
            }
        } else {
            all_files.push(path.clone());
        }
    }

    let mut report = DetectReport::default();
    for file in &all_files {
        match detector.scan_file(file) {
            Ok(scan) => {
                report.findings.extend(scan.findings);
                report.skipped.extend(scan.skipped);
                report.files_scanned += scan.files_scanned;
            }
            Err(err) => {
                log::warn!("failed to scan {}: {err}", file.display());
                report.files_failed += 1;
            }
        }
    }
    sort_findings(&mut report.findings);
    Ok(report)
}

/// Write the findings report file:
/// `file \t line \t task_name \t module_key \t p_inconsistent \t verdict \t model_version`.
pub fn write_findings_report(report: &DetectReport, path: &Path) -> Result<()> {
    let mut out =
        String::from("file\tline\ttask_name\tmodule_key\tp_inconsistent\tverdict\tmodel_version\n");
    for finding in &report.findings {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            textio::escape_token(&finding.source.path.display().to_string()),
            finding.source.line,
            textio::escape_token(&finding.task_name),
            finding.module_key,
            finding.p_inconsistent,
            finding.verdict.as_str(),
            finding.model_version,
        ));
    }
    for skip in &report.skipped {
        out.push_str(&format!(
            "# skipped\t{}\t{}\t{}\t{}\t{}\n",
            textio::escape_token(&skip.source.path.display().to_string()),
            skip.source.line,
            textio::escape_token(&skip.task_name),
            skip.module_key,
            skip.reason,
        ));
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Debug, Clone)]
pub struct MineSummary {
    pub candidates: usize,
    pub accepted: usize,
    pub files: usize,
    pub manifest_path: PathBuf,
}

/// Filter candidate repositories by the four quality criteria and record
/// every YAML file under the corpus roots into a manifest file.
pub fn run_mine(config: &PipelineConfig, out_path: &Path) -> Result<MineSummary> {
    let metadata_path = config
        .metadata_path
        .as_ref()
        .ok_or_else(|| Error::BadConfig("mine needs a metadata file (set `metadata`)".into()))?;
    let candidates = corpus::read_repo_metadata(metadata_path)?;
    let accepted = corpus::filter_repos(&candidates);
    let mut manifest = if config.corpus_roots.is_empty() {
        CorpusManifest {
            repos: Vec::new(),
            yaml_files: Vec::new(),
            collected_at: chrono::Utc::now().to_rfc3339(),
        }
    } else {
        corpus::enumerate_task_files(&config.corpus_roots)?
    };
    manifest.repos = accepted;
    corpus::write_manifest(&manifest, out_path)?;
    Ok(MineSummary {
        candidates: candidates.len(),
        accepted: manifest.repos.len(),
        files: manifest.yaml_files.len(),
        manifest_path: out_path.to_path_buf(),
    })
}
