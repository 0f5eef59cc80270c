//! Continuous-bag-of-words token embeddings with negative sampling.
//!
//! One model is trained per Ansible module over the concatenated
//! name/separator/body token sequences of that module's training split.
//! Training is single-threaded and seeded, so a given corpus and config
//! always produce the same vectors.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::textio;

/// Final learning rate of the linear decay schedule.
const MIN_LEARNING_RATE: f64 = 1e-4;
/// Exponent of the unigram noise distribution.
const NOISE_POWER: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Dimensionality of the trained vectors.
    pub vector_size: usize,
    /// Initial SGD learning rate; decays linearly to 1e-4 over the epochs.
    pub learning_rate: f64,
    /// Tokens rarer than this are dropped from the vocabulary.
    pub min_word_frequency: usize,
    /// Full window width; w/2 tokens are taken on each side of the center.
    pub window: usize,
    pub epochs: usize,
    /// Negative samples per positive, drawn from unigram^0.75 noise.
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            vector_size: 100,
            learning_rate: 0.025,
            min_word_frequency: 1,
            window: 6,
            epochs: 1000,
            negative_samples: 5,
            seed: 1,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vector_size == 0 {
            return Err(Error::BadEmbeddingConfig("vector_size must be > 0".into()));
        }
        if self.window < 2 || self.window % 2 != 0 {
            return Err(Error::BadEmbeddingConfig(format!(
                "window must be even and >= 2, got {}",
                self.window
            )));
        }
        if self.epochs == 0 {
            return Err(Error::BadEmbeddingConfig("epochs must be >= 1".into()));
        }
        if self.negative_samples == 0 {
            return Err(Error::BadEmbeddingConfig(
                "negative_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trained embeddings for one module key.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub module_key: String,
    /// Token → row index, in first-occurrence order.
    pub vocab: IndexMap<String, usize>,
    /// |V| × d input (context) vectors; these are the embeddings served.
    pub input_vectors: Array2<f64>,
    /// |V| × d output (center-word) vectors, kept for resumed training.
    pub output_vectors: Array2<f64>,
    pub config: EmbeddingConfig,
}

impl EmbeddingModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// Map tokens to their input vectors, one row per token.
    /// Out-of-vocabulary tokens become zero rows.
    pub fn embed_sequence(&self, tokens: &[String]) -> Array2<f64> {
        let d = self.config.vector_size;
        let mut out = Array2::zeros((tokens.len(), d));
        for (row, token) in tokens.iter().enumerate() {
            if let Some(idx) = self.token_index(token) {
                out.row_mut(row).assign(&self.input_vectors.row(idx));
            }
        }
        out
    }
}

/// Loss of one CBOW step: predict `center` from the mean of the context
/// input vectors against `negatives` drawn from the noise distribution.
///
/// `L = softplus(-v'_c · h) + Σ_j softplus(v'_nj · h)` with
/// `h = mean(input[context])`.
pub fn step_loss(
    input: &Array2<f64>,
    output: &Array2<f64>,
    context: &[usize],
    center: usize,
    negatives: &[usize],
) -> f64 {
    let h = mean_context(input, context);
    let mut loss = softplus(-output.row(center).dot(&h));
    for &neg in negatives {
        loss += softplus(output.row(neg).dot(&h));
    }
    loss
}

/// Analytic gradients of [`step_loss`].
pub struct StepGrads {
    /// Gradient wrt each context token's input vector (shared: the mean
    /// distributes the hidden gradient equally).
    pub context_grad: Array1<f64>,
    /// Gradient wrt the output vector of each scored token, in
    /// (center, negatives...) order. Repeated negatives repeat here.
    pub output_grads: Vec<(usize, Array1<f64>)>,
}

/// Gradients for one CBOW step, matching [`step_loss`] exactly.
pub fn step_grads(
    input: &Array2<f64>,
    output: &Array2<f64>,
    context: &[usize],
    center: usize,
    negatives: &[usize],
) -> StepGrads {
    let h = mean_context(input, context);
    let mut hidden_grad = Array1::<f64>::zeros(h.len());
    let mut output_grads = Vec::with_capacity(1 + negatives.len());

    let g_center = sigmoid(output.row(center).dot(&h)) - 1.0;
    hidden_grad.scaled_add(g_center, &output.row(center));
    output_grads.push((center, &h * g_center));

    for &neg in negatives {
        let g_neg = sigmoid(output.row(neg).dot(&h));
        hidden_grad.scaled_add(g_neg, &output.row(neg));
        output_grads.push((neg, &h * g_neg));
    }

    StepGrads {
        context_grad: hidden_grad / context.len() as f64,
        output_grads,
    }
}

fn mean_context(input: &Array2<f64>, context: &[usize]) -> Array1<f64> {
    let mut h = Array1::<f64>::zeros(input.ncols());
    for &idx in context {
        h += &input.row(idx);
    }
    h / context.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cumulative unigram^0.75 table for negative sampling.
struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    fn new(frequencies: &[usize]) -> Self {
        let mut cumulative = Vec::with_capacity(frequencies.len());
        let mut acc = 0.0;
        for &freq in frequencies {
            acc += (freq as f64).powf(NOISE_POWER);
            cumulative.push(acc);
        }
        Self { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty distribution");
        let target = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }
}

/// Train CBOW embeddings over the token sequences.
///
/// Deterministic for a fixed config seed: sequences are visited in order,
/// single-threaded, with all randomness drawn from one seeded stream.
pub fn train_cbow(
    sequences: &[Vec<String>],
    module_key: &str,
    config: &EmbeddingConfig,
) -> Result<EmbeddingModel> {
    config.validate()?;
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }

    // Vocabulary in first-occurrence order, then frequency filtering.
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for token in sequences.iter().flatten() {
        *counts.entry(token.clone()).or_insert(0) += 1;
    }
    let mut vocab: IndexMap<String, usize> = IndexMap::new();
    let mut frequencies = Vec::new();
    for (token, count) in &counts {
        if *count >= config.min_word_frequency {
            vocab.insert(token.clone(), vocab.len());
            frequencies.push(*count);
        }
    }
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if vocab.len() < 2 {
        return Err(Error::VocabTooSmall(vocab.len()));
    }

    // Tokens dropped by the frequency filter vanish from the sequences.
    let id_sequences: Vec<Vec<usize>> = sequences
        .iter()
        .map(|seq| {
            seq.iter()
                .filter_map(|t| vocab.get(t).copied())
                .collect::<Vec<usize>>()
        })
        .collect();
    if !id_sequences.iter().any(|s| s.len() >= 2) {
        return Err(Error::NoTrainingPairs);
    }

    let d = config.vector_size;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut input = Array2::from_shape_fn((vocab.len(), d), |_| {
        (rng.random::<f64>() - 0.5) / d as f64
    });
    let mut output = Array2::<f64>::zeros((vocab.len(), d));

    let noise = NoiseDistribution::new(&frequencies);
    let half_window = config.window / 2;
    let min_rate = config.learning_rate.min(MIN_LEARNING_RATE);
    let mut negatives = Vec::with_capacity(config.negative_samples);

    for epoch in 0..config.epochs {
        let progress = if config.epochs > 1 {
            epoch as f64 / (config.epochs - 1) as f64
        } else {
            0.0
        };
        let rate = config.learning_rate + (min_rate - config.learning_rate) * progress;

        for seq in &id_sequences {
            for (pos, &center) in seq.iter().enumerate() {
                let lo = pos.saturating_sub(half_window);
                let hi = (pos + half_window).min(seq.len() - 1);
                let context: Vec<usize> = (lo..=hi).filter(|&i| i != pos).map(|i| seq[i]).collect();
                if context.is_empty() {
                    continue;
                }
                negatives.clear();
                for _ in 0..config.negative_samples {
                    let sample = noise.sample(&mut rng);
                    // word2vec-style: a draw that hits the center is dropped.
                    if sample != center {
                        negatives.push(sample);
                    }
                }
                let grads = step_grads(&input, &output, &context, center, &negatives);
                for (token, grad) in &grads.output_grads {
                    let mut row = output.row_mut(*token);
                    row.scaled_add(-rate, grad);
                }
                for &token in &context {
                    let mut row = input.row_mut(token);
                    row.scaled_add(-rate, &grads.context_grad);
                }
            }
        }
    }

    debug_assert!(input.iter().all(|v| v.is_finite()));
    Ok(EmbeddingModel {
        module_key: module_key.to_string(),
        vocab,
        input_vectors: input,
        output_vectors: output,
        config: config.clone(),
    })
}

const MODEL_HEADER: &str = "tasklint-embedding v1";

/// Persist the model as a text file: a config header, then one
/// `token v1 … vd` line per vocabulary entry for the input vectors,
/// then the same for the output vectors.
pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "module_key\t{}\n",
        textio::escape_token(&model.module_key)
    ));
    let c = &model.config;
    out.push_str(&format!("vector_size\t{}\n", c.vector_size));
    out.push_str(&format!("learning_rate\t{}\n", c.learning_rate));
    out.push_str(&format!("min_word_frequency\t{}\n", c.min_word_frequency));
    out.push_str(&format!("window\t{}\n", c.window));
    out.push_str(&format!("epochs\t{}\n", c.epochs));
    out.push_str(&format!("negative_samples\t{}\n", c.negative_samples));
    out.push_str(&format!("seed\t{}\n", c.seed));
    out.push_str(&format!("vocab_size\t{}\n", model.vocab.len()));
    for section in ["input_vectors", "output_vectors"] {
        out.push_str(section);
        out.push('\n');
        let matrix = if section == "input_vectors" {
            &model.input_vectors
        } else {
            &model.output_vectors
        };
        for (token, &idx) in &model.vocab {
            out.push_str(&textio::escape_token(token));
            for value in matrix.row(idx) {
                out.push(' ');
                out.push_str(&format!("{value}"));
            }
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Load a model saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |message: String| Error::MalformedFile {
        path: path.to_path_buf(),
        what: "embedding model",
        message,
    };
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| bad(format!("missing {what}")))
    };

    let header = next_line("header")?;
    if header != MODEL_HEADER {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = next_line(name)?;
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| bad(format!("malformed field line `{line}`")))?;
        if key != name {
            return Err(bad(format!("expected field `{name}`, found `{key}`")));
        }
        Ok(value.to_string())
    };

    let module_key = textio::unescape_token(&field("module_key")?);
    let parse = |text: String, what: &str| -> Result<usize> {
        text.parse::<usize>()
            .map_err(|e| bad(format!("bad {what}: {e}")))
    };
    let config = EmbeddingConfig {
        vector_size: parse(field("vector_size")?, "vector_size")?,
        learning_rate: field("learning_rate")?
            .parse()
            .map_err(|e| bad(format!("bad learning_rate: {e}")))?,
        min_word_frequency: parse(field("min_word_frequency")?, "min_word_frequency")?,
        window: parse(field("window")?, "window")?,
        epochs: parse(field("epochs")?, "epochs")?,
        negative_samples: parse(field("negative_samples")?, "negative_samples")?,
        seed: field("seed")?
            .parse()
            .map_err(|e| bad(format!("bad seed: {e}")))?,
    };
    let vocab_size = parse(field("vocab_size")?, "vocab_size")?;

    let mut vocab = IndexMap::new();
    let mut input = Array2::<f64>::zeros((vocab_size, config.vector_size));
    let mut output = Array2::<f64>::zeros((vocab_size, config.vector_size));
    for (section, matrix) in [("input_vectors", &mut input), ("output_vectors", &mut output)] {
        let marker = next_line(section)?;
        if marker != section {
            return Err(bad(format!("expected section `{section}`, found `{marker}`")));
        }
        for row in 0..vocab_size {
            let line = next_line("vector row")?;
            let mut parts = line.split(' ');
            let token = textio::unescape_token(
                parts.next().ok_or_else(|| bad("empty vector row".into()))?,
            );
            if section == "input_vectors" {
                vocab.insert(token, row);
            } else if vocab.get_index(row).map(|(t, _)| t.as_str())
                != Some(token.as_str())
            {
                return Err(bad(format!("vocab mismatch at row {row}")));
            }
            let mut filled = 0;
            for (col, value) in parts.enumerate() {
                if col >= config.vector_size {
                    return Err(bad(format!("too many values in row {row}")));
                }
                matrix[(row, col)] = value
                    .parse()
                    .map_err(|e| bad(format!("bad value in row {row}: {e}")))?;
                filled += 1;
            }
            if filled != config.vector_size {
                return Err(bad(format!(
                    "row {row} has {filled} values, expected {}",
                    config.vector_size
                )));
            }
        }
    }
    Ok(EmbeddingModel {
        module_key,
        vocab,
        input_vectors: input,
        output_vectors: output,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(d: usize, epochs: usize) -> EmbeddingConfig {
        EmbeddingConfig {
            vector_size: d,
            learning_rate: 0.05,
            min_word_frequency: 1,
            window: 2,
            epochs,
            negative_samples: 2,
            seed: 7,
        }
    }

    fn seqs(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    #[test]
    fn cooccurring_pair_scores_high_after_training() {
        let corpus: Vec<Vec<String>> =
            (0..500).map(|_| vec!["a".to_string(), "b".to_string()]).collect();
        let model = train_cbow(&corpus, "toy", &toy_config(16, 50)).unwrap();
        let a = model.token_index("a").unwrap();
        let b = model.token_index("b").unwrap();
        let score = model
            .input_vectors
            .row(a)
            .dot(&model.output_vectors.row(b));
        assert!(
            sigmoid(score) > 0.9,
            "sigmoid(input[a]·output[b]) = {} too low",
            sigmoid(score)
        );
    }

    #[test]
    fn vocab_covers_every_token_at_min_frequency_one() {
        let corpus = seqs(&[&["x", "y", "z"], &["x", "w"]]);
        let model = train_cbow(&corpus, "toy", &toy_config(8, 2)).unwrap();
        for token in ["x", "y", "z", "w"] {
            assert!(model.token_index(token).is_some(), "missing {token}");
        }
    }

    #[test]
    fn min_frequency_filter_drops_rare_tokens() {
        let mut config = toy_config(8, 2);
        config.min_word_frequency = 2;
        let corpus = seqs(&[&["x", "y"], &["x", "y"], &["x", "rare"]]);
        let model = train_cbow(&corpus, "toy", &config).unwrap();
        assert!(model.token_index("rare").is_none());
        assert_eq!(model.vocab_size(), 2);
    }

    #[test]
    fn window_clips_at_sequence_boundaries() {
        let mut config = toy_config(8, 2);
        config.window = 6;
        let corpus = seqs(&[&["a", "b", "c"]]);
        let model = train_cbow(&corpus, "toy", &config).unwrap();
        assert_eq!(model.vocab_size(), 3);
        assert!(model.input_vectors.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_corpus_and_tiny_vocab_error() {
        assert!(matches!(
            train_cbow(&[], "toy", &toy_config(8, 1)).unwrap_err(),
            Error::EmptyCorpus
        ));
        let corpus = seqs(&[&["only", "only"]]);
        assert!(matches!(
            train_cbow(&corpus, "toy", &toy_config(8, 1)).unwrap_err(),
            Error::VocabTooSmall(1)
        ));
    }

    #[test]
    fn length_one_sequences_have_no_pairs() {
        let corpus = seqs(&[&["a"], &["b"]]);
        assert!(matches!(
            train_cbow(&corpus, "toy", &toy_config(8, 1)).unwrap_err(),
            Error::NoTrainingPairs
        ));
    }

    #[test]
    fn embed_sequence_is_length_preserving_with_zero_oov() {
        let corpus = seqs(&[&["known", "other"]]);
        let model = train_cbow(&corpus, "toy", &toy_config(8, 2)).unwrap();
        let embedded = model.embed_sequence(&["known".into(), "unknown".into()]);
        assert_eq!(embedded.nrows(), 2);
        assert_eq!(embedded.ncols(), 8);
        assert!(embedded.row(0).iter().any(|v| *v != 0.0));
        assert!(embedded.row(1).iter().all(|v| *v == 0.0));
        let empty = model.embed_sequence(&[]);
        assert_eq!(empty.nrows(), 0);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let corpus = seqs(&[&["a", "b", "c", "d"], &["c", "d", "e"]]);
        let one = train_cbow(&corpus, "toy", &toy_config(8, 5)).unwrap();
        let two = train_cbow(&corpus, "toy", &toy_config(8, 5)).unwrap();
        assert_eq!(one.input_vectors, two.input_vectors);
        assert_eq!(one.output_vectors, two.output_vectors);
    }

    #[test]
    fn negative_sampling_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let vocab = 5;
        let d = 7;
        let mut input = Array2::from_shape_fn((vocab, d), |_| rng.random::<f64>() - 0.5);
        let mut output = Array2::from_shape_fn((vocab, d), |_| rng.random::<f64>() - 0.5);
        let context = vec![0usize, 1];
        let center = 2usize;
        // Repeated negative exercises gradient accumulation.
        let negatives = vec![3usize, 4, 3];

        let grads = step_grads(&input, &output, &context, center, &negatives);
        let mut output_grad_acc = Array2::<f64>::zeros((vocab, d));
        for (token, grad) in &grads.output_grads {
            let mut row = output_grad_acc.row_mut(*token);
            row += grad;
        }
        let mut input_grad_acc = Array2::<f64>::zeros((vocab, d));
        for &token in &context {
            let mut row = input_grad_acc.row_mut(token);
            row += &grads.context_grad;
        }

        let eps = 1e-5;
        let mut check = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "gradient mismatch: analytic {analytic}, numeric {numeric}"
            );
        };
        for row in 0..vocab {
            for col in 0..d {
                let saved = input[(row, col)];
                input[(row, col)] = saved + eps;
                let plus = step_loss(&input, &output, &context, center, &negatives);
                input[(row, col)] = saved - eps;
                let minus = step_loss(&input, &output, &context, center, &negatives);
                input[(row, col)] = saved;
                check(input_grad_acc[(row, col)], (plus - minus) / (2.0 * eps));

                let saved = output[(row, col)];
                output[(row, col)] = saved + eps;
                let plus = step_loss(&input, &output, &context, center, &negatives);
                output[(row, col)] = saved - eps;
                let minus = step_loss(&input, &output, &context, center, &negatives);
                output[(row, col)] = saved;
                check(output_grad_acc[(row, col)], (plus - minus) / (2.0 * eps));
            }
        }
    }

    #[test]
    fn cooccurring_tokens_beat_random_similarity() {
        // 12 pairs that only ever appear together. Repeating the pair
        // inside each sequence gives both members the same context
        // distribution, which is what draws their vectors together.
        let pair_count = 12;
        let mut corpus = Vec::new();
        for i in 0..pair_count {
            for _ in 0..40 {
                corpus.push(vec![
                    format!("left{i}"),
                    format!("right{i}"),
                    format!("left{i}"),
                    format!("right{i}"),
                ]);
            }
        }
        let mut config = toy_config(16, 30);
        config.window = 6;
        let model = train_cbow(&corpus, "toy", &config).unwrap();

        let cosine = |a: usize, b: usize| {
            let va = model.input_vectors.row(a);
            let vb = model.input_vectors.row(b);
            va.dot(&vb) / (va.dot(&va).sqrt() * vb.dot(&vb).sqrt())
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut wins = 0;
        for i in 0..pair_count {
            let left = model.token_index(&format!("left{i}")).unwrap();
            let right = model.token_index(&format!("right{i}")).unwrap();
            let partner_sim = cosine(left, right);
            let mean_random: f64 = (0..20)
                .map(|_| {
                    let mut other = rng.random_range(0..model.vocab_size());
                    while other == left || other == right {
                        other = rng.random_range(0..model.vocab_size());
                    }
                    cosine(left, other)
                })
                .sum::<f64>()
                / 20.0;
            if partner_sim > mean_random {
                wins += 1;
            }
        }
        assert!(
            wins >= pair_count - 1,
            "only {wins}/{pair_count} pairs beat their random baseline"
        );
    }

    #[test]
    fn model_file_round_trips() {
        let corpus = seqs(&[&["alpha", "beta gamma", "delta"], &["alpha", "epsilon"]]);
        let model = train_cbow(&corpus, "demo module", &toy_config(6, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embedding.txt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.module_key, model.module_key);
        assert_eq!(loaded.vocab, model.vocab);
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.input_vectors, model.input_vectors);
        assert_eq!(loaded.output_vectors, model.output_vectors);
    }
}
