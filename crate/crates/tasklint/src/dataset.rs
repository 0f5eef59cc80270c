//! Per-module dataset construction: leakage-safe splitting first, then
//! body-swap mutation inside each split.
//!
//! Splitting happens before any mutation so a donor body can never cross
//! split boundaries. Every original task contributes one consistent
//! example and one inconsistent example whose body comes from a randomly
//! chosen donor in the same split.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::textio;
use crate::tokenize::NormalizedExample;

/// Binary class of an example. Inconsistent is the positive class for
/// evaluation; consistent is coded 1 on the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Inconsistent,
    Consistent,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Inconsistent => 0,
            Label::Consistent => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Inconsistent => "inconsistent",
            Label::Consistent => "consistent",
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Inconsistent),
            1 => Some(Label::Consistent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    SameModuleSwap,
    CrossModuleSwap,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::SameModuleSwap => "same_module_swap",
            Provenance::CrossModuleSwap => "cross_module_swap",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "original" => Some(Provenance::Original),
            "same_module_swap" => Some(Provenance::SameModuleSwap),
            "cross_module_swap" => Some(Provenance::CrossModuleSwap),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Eval => "eval",
        }
    }

    pub fn all() -> [Split; 3] {
        [Split::Train, Split::Test, Split::Eval]
    }
}

/// One unit of learning.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub base: NormalizedExample,
    pub label: Label,
    pub provenance: Provenance,
    pub split: Split,
    /// Task id of the body donor, for swap provenance.
    pub donor_id: Option<String>,
}

/// How to divide one module's examples into train/test/eval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
    pub module_key: String,
}

impl SplitPlan {
    pub fn new(module_key: impl Into<String>, seed: u64) -> Self {
        Self {
            train_ratio: 0.60,
            test_ratio: 0.20,
            seed,
            module_key: module_key.into(),
        }
    }

    pub fn eval_ratio(&self) -> f64 {
        1.0 - self.train_ratio - self.test_ratio
    }

    fn validate(&self) -> Result<()> {
        let eval = self.eval_ratio();
        if self.train_ratio <= 0.0 || self.test_ratio <= 0.0 || eval <= 0.0 {
            return Err(Error::BadSplitRatios {
                train: self.train_ratio,
                test: self.test_ratio,
            });
        }
        Ok(())
    }
}

/// The three disjoint example lists produced by [`split`].
#[derive(Debug, Clone, Default)]
pub struct SplitSets {
    pub train: Vec<NormalizedExample>,
    pub test: Vec<NormalizedExample>,
    pub eval: Vec<NormalizedExample>,
}

impl SplitSets {
    pub fn get(&self, split: Split) -> &[NormalizedExample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Eval => &self.eval,
        }
    }
}

/// Shuffle with the plan's seed, then cut into ⌊train·n⌋ / ⌊test·n⌋ /
/// remainder. Deterministic for a given seed.
pub fn split(examples: &[NormalizedExample], plan: &SplitPlan) -> Result<SplitSets> {
    plan.validate()?;
    let n = examples.len();
    if n < 5 {
        return Err(Error::TooFewExamples {
            module_key: plan.module_key.clone(),
            count: n,
        });
    }
    let mut shuffled: Vec<NormalizedExample> = examples.to_vec();
    let mut rng = ChaCha12Rng::seed_from_u64(plan.seed);
    shuffled.shuffle(&mut rng);

    let train_len = (plan.train_ratio * n as f64).floor() as usize;
    let test_len = (plan.test_ratio * n as f64).floor() as usize;
    let eval = shuffled.split_off(train_len + test_len);
    let test = shuffled.split_off(train_len);
    Ok(SplitSets {
        train: shuffled,
        test,
        eval,
    })
}

/// Outcome of mutating one split of one module.
#[derive(Debug, Clone, Default)]
pub struct MutationOutcome {
    pub examples: Vec<LabeledExample>,
    /// Tasks skipped because no differing donor body was found.
    pub skipped_task_ids: Vec<String>,
}

const MAX_DONOR_DRAWS: usize = 10;

/// Generate the labeled dataset for one split: each task keeps its
/// original body as a consistent example and gets one donor body as an
/// inconsistent example. With probability `cross_fraction` the donor
/// comes from the cross-module pool, otherwise from the same-module pool;
/// donors whose body equals the original token-for-token are redrawn up
/// to ten times before the task is skipped.
pub fn mutate(
    split_examples: &[NormalizedExample],
    donor_pool_same: &[NormalizedExample],
    donor_pool_cross: &[NormalizedExample],
    split: Split,
    seed: u64,
    cross_fraction: f64,
) -> Result<MutationOutcome> {
    let module_key = split_examples
        .first()
        .map(|e| e.module_key.clone())
        .unwrap_or_default();
    if donor_pool_same.is_empty() && donor_pool_cross.is_empty() {
        return Err(Error::DonorPoolsEmpty(module_key));
    }
    if cross_fraction <= 0.0 && donor_pool_same.len() <= 1 {
        return Err(Error::NoValidDonor(module_key));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut outcome = MutationOutcome::default();
    for example in split_examples {
        let mut donor: Option<(&NormalizedExample, Provenance)> = None;
        for _ in 0..MAX_DONOR_DRAWS {
            let use_cross = if donor_pool_cross.is_empty() {
                false
            } else if donor_pool_same.is_empty() {
                true
            } else {
                rng.random::<f64>() < cross_fraction
            };
            let (pool, provenance) = if use_cross {
                (donor_pool_cross, Provenance::CrossModuleSwap)
            } else {
                (donor_pool_same, Provenance::SameModuleSwap)
            };
            let candidate = &pool[rng.random_range(0..pool.len())];
            if candidate.body_tokens != example.body_tokens {
                donor = Some((candidate, provenance));
                break;
            }
        }
        let Some((donor, provenance)) = donor else {
            log::warn!(
                "no differing donor body for task {} after {MAX_DONOR_DRAWS} draws; skipping",
                example.task_id
            );
            outcome.skipped_task_ids.push(example.task_id.clone());
            continue;
        };
        outcome.examples.push(LabeledExample {
            base: example.clone(),
            label: Label::Consistent,
            provenance: Provenance::Original,
            split,
            donor_id: None,
        });
        outcome.examples.push(LabeledExample {
            base: NormalizedExample {
                task_id: example.task_id.clone(),
                module_key: example.module_key.clone(),
                name_tokens: example.name_tokens.clone(),
                body_tokens: donor.body_tokens.clone(),
            },
            label: Label::Inconsistent,
            provenance,
            split,
            donor_id: Some(donor.task_id.clone()),
        });
    }
    Ok(outcome)
}

/// Dataset file path for one (module, split) pair.
pub fn dataset_path(dir: &Path, module_key: &str, split: Split) -> PathBuf {
    dir.join(module_key).join(format!("{}.tsv", split.as_str()))
}

/// Write one (module, split) dataset file:
/// `label \t provenance \t task_id \t name tokens \t body tokens`.
pub fn write_dataset(dir: &Path, module_key: &str, split: Split, examples: &[LabeledExample]) -> Result<PathBuf> {
    let path = dataset_path(dir, module_key, split);
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            ex.label.code(),
            ex.provenance.as_str(),
            textio::escape_token(&ex.base.task_id),
            textio::join_tokens(&ex.base.name_tokens),
            textio::join_tokens(&ex.base.body_tokens),
        ));
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Read a dataset file written by [`write_dataset`].
pub fn read_dataset(dir: &Path, module_key: &str, split: Split) -> Result<Vec<LabeledExample>> {
    let path = dataset_path(dir, module_key, split);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedFile {
            path: path.clone(),
            what: "dataset",
            message: format!("line {}: {message}", idx + 1),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let label = fields[0]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| bad(format!("bad label `{}`", fields[0])))?;
        let provenance = Provenance::parse(fields[1])
            .ok_or_else(|| bad(format!("bad provenance `{}`", fields[1])))?;
        examples.push(LabeledExample {
            base: NormalizedExample {
                task_id: textio::unescape_token(fields[2]),
                module_key: module_key.to_string(),
                name_tokens: textio::split_tokens(fields[3]),
                body_tokens: textio::split_tokens(fields[4]),
            },
            label,
            provenance,
            split,
            donor_id: None,
        });
    }
    Ok(examples)
}
