//! Command-line interface for the tasklint pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tasklint::config::{load_config, PipelineConfig};
use tasklint::metrics::render_table;
use tasklint::pipeline;

#[derive(Parser)]
#[command(
    name = "tasklint",
    version,
    about = "Flags Ansible tasks whose name contradicts their body",
    long_about = "Trains one classifier per Ansible module over AST-derived token \
                  embeddings, then scores unseen tasks for name/body inconsistency."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated module allowlist (default: top modules by count).
    #[arg(long, global = true, value_delimiter = ',')]
    modules: Option<Vec<String>>,

    /// Model repository directory.
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,

    /// Directory for token files and datasets.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Decision threshold on p_inconsistent for detection verdicts.
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Comma-separated corpus root directories.
    #[arg(long, global = true, value_delimiter = ',')]
    corpus: Option<Vec<PathBuf>>,

    /// Concurrent per-module training jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter candidate repositories and record the corpus manifest.
    Mine {
        /// Repository metadata file (csv with header).
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Where to write the corpus manifest.
        #[arg(long, default_value = "corpus_manifest.txt")]
        out: PathBuf,
    },
    /// Parse the corpus and write per-module token files.
    Extract,
    /// Split and mutate the token files into labeled datasets.
    Mutate,
    /// Train embeddings and classifiers for every selected module.
    Train,
    /// Re-evaluate stored models on their eval splits.
    Evaluate {
        /// Also dump per-module ROC points under this directory.
        #[arg(long)]
        roc_dir: Option<PathBuf>,
    },
    /// Scan playbooks or directories and report inconsistent tasks.
    Detect {
        /// Playbook files or directories to scan.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Findings report file.
        #[arg(long, default_value = "findings.tsv")]
        report: PathBuf,
    },
}

fn build_config(overrides: &Overrides) -> anyhow::Result<PipelineConfig> {
    let mut config = match &overrides.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        config.seed = seed;
        config.split_seed = None;
        config.mutation_seed = None;
        config.embedding_seed = None;
        config.cnn_seed = None;
    }
    if let Some(modules) = &overrides.modules {
        config.module_allowlist = Some(modules.clone());
    }
    if let Some(dir) = &overrides.model_dir {
        config.model_dir = dir.clone();
    }
    if let Some(dir) = &overrides.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(threshold) = overrides.threshold {
        config.threshold = threshold;
    }
    if let Some(roots) = &overrides.corpus {
        config.corpus_roots = roots.clone();
    }
    if let Some(workers) = overrides.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = build_config(&cli.overrides)?;
    match cli.command {
        Command::Mine { metadata, out } => {
            if let Some(metadata) = metadata {
                config.metadata_path = Some(metadata);
            }
            let summary = pipeline::run_mine(&config, &out)?;
            println!(
                "accepted {}/{} repositories; recorded {} yaml files in {}",
                summary.accepted,
                summary.candidates,
                summary.files,
                summary.manifest_path.display()
            );
        }
        Command::Extract => {
            let summary = pipeline::run_extract(&config)?;
            println!(
                "parsed {} files ({} failed), {} tasks, {} skipped",
                summary.files_parsed,
                summary.files_failed,
                summary.total_tasks,
                summary.tasks_skipped
            );
            println!("tasks per module:");
            for (module, count) in &summary.module_counts {
                let marker = if summary.selected_modules.contains(module) {
                    "*"
                } else {
                    " "
                };
                println!("  {marker} {module:<20} {count}");
            }
            println!("selected modules: {}", summary.selected_modules.join(", "));
        }
        Command::Mutate => {
            let (datasets, failures) = pipeline::run_mutate(&config)?;
            for data in &datasets {
                println!(
                    "{}: {}/{}/{} tasks -> {}/{}/{} examples ({} skipped)",
                    data.module_key,
                    data.counts.train_tasks,
                    data.counts.test_tasks,
                    data.counts.eval_tasks,
                    data.counts.train_examples,
                    data.counts.test_examples,
                    data.counts.eval_examples,
                    data.counts.skipped_tasks
                );
            }
            for (module, reason) in &failures {
                eprintln!("skipped module `{module}`: {reason}");
            }
        }
        Command::Train => {
            let summary = pipeline::run_train(&config)?;
            for trained in &summary.trained {
                println!(
                    "{}: accuracy {:.3}, mcc {:.3}, auc {:.3} (model {}, {:.1}s)",
                    trained.module_key,
                    trained.metrics.accuracy,
                    trained.metrics.mcc,
                    trained.metrics.auc,
                    trained.model_version,
                    trained.train_seconds
                );
            }
            for (module, reason) in &summary.failed {
                eprintln!("skipped module `{module}`: {reason}");
            }
            let reports: Vec<_> = summary.trained.iter().map(|t| t.metrics.clone()).collect();
            println!("\n{}", render_table(&reports));
        }
        Command::Evaluate { roc_dir } => {
            let reports = pipeline::run_evaluate(&config)?;
            println!("{}", render_table(&reports));
            if let Some(roc_dir) = roc_dir {
                write_roc_points(&config, &roc_dir)?;
            }
        }
        Command::Detect { paths, report } => {
            let scan = pipeline::run_detect(&config, &paths)?;
            pipeline::write_findings_report(&scan, &report)?;
            for finding in &scan.findings {
                println!(
                    "{}\t{}\tp_inconsistent={:.3}\t{}\t{}",
                    finding.source,
                    finding.module_key,
                    finding.p_inconsistent,
                    finding.verdict.as_str(),
                    finding.task_name
                );
            }
            for skip in &scan.skipped {
                eprintln!(
                    "skipped {} ({}): {}",
                    skip.source, skip.module_key, skip.reason
                );
            }
            let inconsistent = scan.inconsistent_count();
            eprintln!(
                "scanned {} files ({} failed): {} tasks scored, {} inconsistent, {} skipped; report: {}",
                scan.files_scanned,
                scan.files_failed,
                scan.findings.len(),
                inconsistent,
                scan.skipped.len(),
                report.display()
            );
            if inconsistent > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_roc_points(config: &PipelineConfig, roc_dir: &std::path::Path) -> anyhow::Result<()> {
    use tasklint::cnn::prepare_input;
    use tasklint::dataset::{read_dataset, Split};
    use tasklint::metrics::roc_points;
    use tasklint::model_repo;

    std::fs::create_dir_all(roc_dir)
        .with_context(|| format!("creating {}", roc_dir.display()))?;
    for module in model_repo::list_modules(&config.model_dir)? {
        let loaded = model_repo::load_module(&config.model_dir, &module)?;
        let examples = read_dataset(&config.datasets_dir(), &module, Split::Eval)?;
        let mut scores = Vec::new();
        let mut truths = Vec::new();
        for example in &examples {
            let input = prepare_input(&example.base, &loaded.embedding, &loaded.cnn.padding);
            scores.push(
                loaded
                    .cnn
                    .predict(&example.base.task_id, &input)?
                    .p_inconsistent,
            );
            truths.push(example.label);
        }
        let points = roc_points(&scores, &truths)?;
        let mut out = String::from("threshold\ttrue_positive_rate\tfalse_positive_rate\n");
        for p in points {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                p.threshold, p.true_positive_rate, p.false_positive_rate
            ));
        }
        std::fs::write(roc_dir.join(format!("{module}.tsv")), out)
            .with_context(|| format!("writing roc points for {module}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
