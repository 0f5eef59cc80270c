//! Per-module CNN binary classifier over embedded, padded token sequences.
//!
//! Architecture: two valid 1-D convolution + ReLU + max-pool stages along
//! the sequence axis, flatten, dropout, a ReLU dense layer, and a 2-way
//! softmax head. The loss is mean absolute error against the one-hot
//! label plus L2 penalties on both convolution kernels, optimized with
//! plain mini-batch SGD. Training is single-threaded and seeded; the same
//! seed always yields bit-identical weights.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::write_atomic;
use crate::dataset::Label;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::textio;
use crate::tokenize::NormalizedExample;

/// Input padding derived from the training split's sequence lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingSpec {
    /// `ceil(mean + population std)` of the training sequence lengths.
    pub max_length: usize,
    pub mean_len: f64,
    pub std_len: f64,
    /// Share of training sequences longer than `max_length`.
    pub truncated_fraction: f64,
}

/// Mean and population standard deviation of the training sequence
/// lengths decide the padded input width: `max_length = ceil(mean + std)`.
pub fn compute_padding(train_sequences: &[Vec<String>]) -> Result<PaddingSpec> {
    if train_sequences.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n = train_sequences.len() as f64;
    let lengths: Vec<f64> = train_sequences.iter().map(|s| s.len() as f64).collect();
    let mean = lengths.iter().sum::<f64>() / n;
    let variance = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    let max_length = ((mean + std).ceil() as usize).max(1);
    let truncated = lengths.iter().filter(|&&l| l > max_length as f64).count();
    Ok(PaddingSpec {
        max_length,
        mean_len: mean,
        std_len: std,
        truncated_fraction: truncated as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// The default: mean absolute error between softmax and one-hot label.
    MeanAbsoluteError,
    /// Optional alternative behind a config flag.
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::MeanAbsoluteError => "mean_absolute_error",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "mean_absolute_error" => Some(LossKind::MeanAbsoluteError),
            "cross_entropy" => Some(LossKind::CrossEntropy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnHyperparameters {
    /// Filters per convolution layer.
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    /// L2 penalty weight on each convolution kernel.
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epoch cap; the best test-split snapshot is returned.
    pub epochs: usize,
    pub loss: LossKind,
}

impl Default for CnnHyperparameters {
    fn default() -> Self {
        Self {
            conv_filters: 10,
            kernel_width: 5,
            pool_width: 2,
            l2_lambda: 0.01,
            dropout_rate: 0.5,
            dense_units: 64,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 200,
            loss: LossKind::MeanAbsoluteError,
        }
    }
}

impl CnnHyperparameters {
    /// Sequence lengths after each stage; errors when any stage collapses
    /// to zero width.
    fn stage_lengths(&self, max_length: usize) -> Result<(usize, usize, usize, usize)> {
        let lengths = self.stage_lengths_unchecked(max_length);
        let (l1, p1, l2, p2) = lengths;
        if l1 == 0 || p1 == 0 || l2 == 0 || p2 == 0 {
            let min = (self.kernel_width..10_000)
                .find(|&ml| {
                    let (a, b, c, d) = self.stage_lengths_unchecked(ml);
                    a > 0 && b > 0 && c > 0 && d > 0
                })
                .unwrap_or(usize::MAX);
            return Err(Error::SequenceBudgetTooSmall { max_length, min });
        }
        Ok(lengths)
    }

    fn stage_lengths_unchecked(&self, max_length: usize) -> (usize, usize, usize, usize) {
        let l1 = (max_length + 1).saturating_sub(self.kernel_width);
        let p1 = l1 / self.pool_width;
        let l2 = (p1 + 1).saturating_sub(self.kernel_width);
        let p2 = l2 / self.pool_width;
        (l1, p1, l2, p2)
    }
}

/// All trainable tensors. Convolution kernels are laid out
/// (width, filters, channels) so the channel axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub conv1_kernel: Array3<f64>,
    pub conv1_bias: Array1<f64>,
    pub conv2_kernel: Array3<f64>,
    pub conv2_bias: Array1<f64>,
    pub dense_weight: Array2<f64>,
    pub dense_bias: Array1<f64>,
    pub output_weight: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl CnnParams {
    fn glorot(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f64 + '_ {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        move || (rng.random::<f64>() * 2.0 - 1.0) * limit
    }

    fn init(
        hp: &CnnHyperparameters,
        input_dim: usize,
        flat_len: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let kw = hp.kernel_width;
        let f = hp.conv_filters;
        let conv1_kernel = {
            let mut gen = Self::glorot(rng, kw * input_dim, kw * f);
            Array3::from_shape_fn((kw, f, input_dim), |_| gen())
        };
        let conv2_kernel = {
            let mut gen = Self::glorot(rng, kw * f, kw * f);
            Array3::from_shape_fn((kw, f, f), |_| gen())
        };
        let dense_weight = {
            let mut gen = Self::glorot(rng, flat_len, hp.dense_units);
            Array2::from_shape_fn((flat_len, hp.dense_units), |_| gen())
        };
        let output_weight = {
            let mut gen = Self::glorot(rng, hp.dense_units, 2);
            Array2::from_shape_fn((hp.dense_units, 2), |_| gen())
        };
        Self {
            conv1_kernel,
            conv1_bias: Array1::zeros(f),
            conv2_kernel,
            conv2_bias: Array1::zeros(f),
            dense_weight,
            dense_bias: Array1::zeros(hp.dense_units),
            output_weight,
            output_bias: Array1::zeros(2),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv1_kernel: Array3::zeros(self.conv1_kernel.dim()),
            conv1_bias: Array1::zeros(self.conv1_bias.dim()),
            conv2_kernel: Array3::zeros(self.conv2_kernel.dim()),
            conv2_bias: Array1::zeros(self.conv2_bias.dim()),
            dense_weight: Array2::zeros(self.dense_weight.dim()),
            dense_bias: Array1::zeros(self.dense_bias.dim()),
            output_weight: Array2::zeros(self.output_weight.dim()),
            output_bias: Array1::zeros(self.output_bias.dim()),
        }
    }

    /// Named flat views over every tensor, for checks and serialization.
    pub fn flat_tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("conv1.kernel", self.conv1_kernel.as_slice().expect("standard layout")),
            ("conv1.bias", self.conv1_bias.as_slice().expect("standard layout")),
            ("conv2.kernel", self.conv2_kernel.as_slice().expect("standard layout")),
            ("conv2.bias", self.conv2_bias.as_slice().expect("standard layout")),
            ("dense.weight", self.dense_weight.as_slice().expect("standard layout")),
            ("dense.bias", self.dense_bias.as_slice().expect("standard layout")),
            ("output.weight", self.output_weight.as_slice().expect("standard layout")),
            ("output.bias", self.output_bias.as_slice().expect("standard layout")),
        ]
    }

    /// Mutable counterpart of [`CnnParams::flat_tensors`].
    pub fn flat_tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("conv1.kernel", self.conv1_kernel.as_slice_mut().expect("standard layout")),
            ("conv1.bias", self.conv1_bias.as_slice_mut().expect("standard layout")),
            ("conv2.kernel", self.conv2_kernel.as_slice_mut().expect("standard layout")),
            ("conv2.bias", self.conv2_bias.as_slice_mut().expect("standard layout")),
            ("dense.weight", self.dense_weight.as_slice_mut().expect("standard layout")),
            ("dense.bias", self.dense_bias.as_slice_mut().expect("standard layout")),
            ("output.weight", self.output_weight.as_slice_mut().expect("standard layout")),
            ("output.bias", self.output_bias.as_slice_mut().expect("standard layout")),
        ]
    }

    fn is_finite(&self) -> bool {
        self.flat_tensors()
            .iter()
            .all(|(_, values)| values.iter().all(|v| v.is_finite()))
    }

    fn tensor_shape(&self, name: &str) -> Vec<usize> {
        match name {
            "conv1.kernel" => self.conv1_kernel.shape().to_vec(),
            "conv1.bias" => self.conv1_bias.shape().to_vec(),
            "conv2.kernel" => self.conv2_kernel.shape().to_vec(),
            "conv2.bias" => self.conv2_bias.shape().to_vec(),
            "dense.weight" => self.dense_weight.shape().to_vec(),
            "dense.bias" => self.dense_bias.shape().to_vec(),
            "output.weight" => self.output_weight.shape().to_vec(),
            "output.bias" => self.output_bias.shape().to_vec(),
            _ => Vec::new(),
        }
    }
}

/// Gradients with the same layout as [`CnnParams`].
pub type Gradients = CnnParams;

/// Loss/accuracy bookkeeping for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Full training loss (data term plus L2 penalty), dropout disabled.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// A trained per-module classifier.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub module_key: String,
    pub hp: CnnHyperparameters,
    pub padding: PaddingSpec,
    /// Embedding dimensionality (input channels).
    pub input_dim: usize,
    pub params: CnnParams,
    pub train_history: Vec<EpochStats>,
    /// Epoch whose post-update snapshot `params` holds.
    pub best_epoch: usize,
    pub seed: u64,
}

/// Classifier verdict for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub task_id: String,
    pub p_inconsistent: f64,
    pub p_consistent: f64,
    pub predicted_label: Label,
    pub threshold: f64,
}

impl Prediction {
    /// Build a prediction from the inconsistent-class probability. The
    /// verdict is inconsistent iff p_inconsistent exceeds the threshold,
    /// so ties at the threshold go to consistent.
    pub fn from_p_inconsistent(task_id: &str, p_inconsistent: f64, threshold: f64) -> Self {
        let predicted_label = if p_inconsistent > threshold {
            Label::Inconsistent
        } else {
            Label::Consistent
        };
        Self {
            task_id: task_id.to_string(),
            p_inconsistent,
            p_consistent: 1.0 - p_inconsistent,
            predicted_label,
            threshold,
        }
    }
}

/// Embed the task's joint name/separator/body sequence and right-pad with
/// zero rows (or truncate the tail) to the padded length.
pub fn prepare_input(
    example: &NormalizedExample,
    emb: &EmbeddingModel,
    pad: &PaddingSpec,
) -> Array2<f64> {
    let tokens = example.joint_sequence();
    let embedded = emb.embed_sequence(&tokens);
    let d = emb.config.vector_size;
    let mut out = Array2::zeros((pad.max_length, d));
    let rows = tokens.len().min(pad.max_length);
    out.slice_mut(s![..rows, ..])
        .assign(&embedded.slice(s![..rows, ..]));
    out
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

fn conv_forward(input: &Array2<f64>, kernel: &Array3<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let (kw, filters, _channels) = kernel.dim();
    let out_len = input.nrows() + 1 - kw;
    let mut out = Array2::zeros((out_len, filters));
    for o in 0..filters {
        out.column_mut(o).fill(bias[o]);
    }
    for u in 0..kw {
        for o in 0..filters {
            let krow = kernel.slice(s![u, o, ..]);
            for p in 0..out_len {
                out[(p, o)] += input.row(p + u).dot(&krow);
            }
        }
    }
    out
}

/// Max-pool along the sequence axis; also returns the winning input row
/// per pooled cell for the backward pass. Ties keep the earliest row.
pub fn max_pool(input: &Array2<f64>, width: usize) -> (Array2<f64>, Array2<usize>) {
    let out_len = input.nrows() / width;
    let channels = input.ncols();
    let mut out = Array2::zeros((out_len, channels));
    let mut arg = Array2::zeros((out_len, channels));
    for q in 0..out_len {
        for c in 0..channels {
            let mut best = input[(q * width, c)];
            let mut best_row = q * width;
            for w in 1..width {
                let value = input[(q * width + w, c)];
                if value > best {
                    best = value;
                    best_row = q * width + w;
                }
            }
            out[(q, c)] = best;
            arg[(q, c)] = best_row;
        }
    }
    (out, arg)
}

fn softmax2(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    exps / sum
}

fn one_hot(label: Label) -> [f64; 2] {
    match label {
        Label::Inconsistent => [1.0, 0.0],
        Label::Consistent => [0.0, 1.0],
    }
}

fn signum_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dropout behavior for a forward/backward pass.
pub enum DropoutMode<'a> {
    /// Inference path: dropout is a no-op.
    Disabled,
    /// Fixed per-example masks over the flattened feature vector; entries
    /// are 0.0 or the inverted-dropout scale.
    Fixed(&'a [Array1<f64>]),
}

impl<'a> DropoutMode<'a> {
    fn mask_for(&self, example_idx: usize) -> Option<&'a Array1<f64>> {
        match self {
            DropoutMode::Disabled => None,
            DropoutMode::Fixed(masks) => Some(&masks[example_idx]),
        }
    }
}

struct ExampleForward {
    z1: Array2<f64>,
    a1: Array2<f64>,
    arg1: Array2<usize>,
    m1: Array2<f64>,
    z2: Array2<f64>,
    arg2: Array2<usize>,
    dropped: Array1<f64>,
    zd: Array1<f64>,
    ad: Array1<f64>,
    probs: Array1<f64>,
}

impl CnnModel {
    fn forward_example(&self, input: &Array2<f64>, mask: Option<&Array1<f64>>) -> ExampleForward {
        let hp = &self.hp;
        let z1 = conv_forward(input, &self.params.conv1_kernel, &self.params.conv1_bias);
        let mut a1 = z1.clone();
        relu_inplace(&mut a1);
        let (m1, arg1) = max_pool(&a1, hp.pool_width);
        let z2 = conv_forward(&m1, &self.params.conv2_kernel, &self.params.conv2_bias);
        let mut a2 = z2.clone();
        relu_inplace(&mut a2);
        let (m2, arg2) = max_pool(&a2, hp.pool_width);
        let flat = Array1::from_iter(m2.iter().cloned());
        let dropped = match mask {
            Some(mask) => &flat * mask,
            None => flat,
        };
        let mut zd = self.params.dense_bias.clone();
        for (j, &v) in dropped.iter().enumerate() {
            if v != 0.0 {
                zd.scaled_add(v, &self.params.dense_weight.row(j));
            }
        }
        let ad = zd.mapv(|v| if v > 0.0 { v } else { 0.0 });
        let mut logits = self.params.output_bias.clone();
        for (u, &v) in ad.iter().enumerate() {
            if v != 0.0 {
                logits.scaled_add(v, &self.params.output_weight.row(u));
            }
        }
        let probs = softmax2(&logits);
        ExampleForward {
            z1,
            a1,
            arg1,
            m1,
            z2,
            arg2,
            dropped,
            zd,
            ad,
            probs,
        }
    }

    fn example_data_loss(&self, probs: &Array1<f64>, label: Label) -> f64 {
        let y = one_hot(label);
        match self.hp.loss {
            LossKind::MeanAbsoluteError => {
                ((probs[0] - y[0]).abs() + (probs[1] - y[1]).abs()) / 2.0
            }
            LossKind::CrossEntropy => {
                let idx = if label == Label::Inconsistent { 0 } else { 1 };
                -probs[idx].max(1e-300).ln()
            }
        }
    }

    fn l2_penalty(&self) -> f64 {
        self.hp.l2_lambda
            * (self.params.conv1_kernel.iter().map(|w| w * w).sum::<f64>()
                + self.params.conv2_kernel.iter().map(|w| w * w).sum::<f64>())
    }

    fn check_shape(&self, input: &Array2<f64>) -> Result<()> {
        if input.nrows() != self.padding.max_length || input.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                rows: input.nrows(),
                cols: input.ncols(),
                want_rows: self.padding.max_length,
                want_cols: self.input_dim,
            });
        }
        Ok(())
    }

    /// Batch loss: mean per-example data loss plus the L2 kernel penalty.
    pub fn loss(
        &self,
        inputs: &[Array2<f64>],
        labels: &[Label],
        dropout: DropoutMode<'_>,
    ) -> Result<f64> {
        let mut data_loss = 0.0;
        for (idx, (input, label)) in inputs.iter().zip(labels).enumerate() {
            self.check_shape(input)?;
            let fwd = self.forward_example(input, dropout.mask_for(idx));
            data_loss += self.example_data_loss(&fwd.probs, *label);
        }
        Ok(data_loss / inputs.len() as f64 + self.l2_penalty())
    }

    /// Batch loss and analytic gradients for every trainable tensor.
    pub fn loss_and_grads(
        &self,
        inputs: &[Array2<f64>],
        labels: &[Label],
        dropout: DropoutMode<'_>,
    ) -> Result<(f64, Gradients)> {
        let mut grads = self.params.zeros_like();
        let mut data_loss = 0.0;
        for (idx, (input, label)) in inputs.iter().zip(labels).enumerate() {
            self.check_shape(input)?;
            data_loss += self.backward_example(input, *label, dropout.mask_for(idx), &mut grads);
        }
        let scale = 1.0 / inputs.len() as f64;
        for (_, slice) in grads.flat_tensors_mut() {
            for v in slice {
                *v *= scale;
            }
        }
        // The L2 penalty applies once per batch.
        grads
            .conv1_kernel
            .scaled_add(2.0 * self.hp.l2_lambda, &self.params.conv1_kernel);
        grads
            .conv2_kernel
            .scaled_add(2.0 * self.hp.l2_lambda, &self.params.conv2_kernel);
        Ok((data_loss * scale + self.l2_penalty(), grads))
    }

    /// Backward pass for one example; returns its data loss.
    fn backward_example(
        &self,
        input: &Array2<f64>,
        label: Label,
        mask: Option<&Array1<f64>>,
        grads: &mut Gradients,
    ) -> f64 {
        let hp = &self.hp;
        let fwd = self.forward_example(input, mask);
        let loss = self.example_data_loss(&fwd.probs, label);
        let y = one_hot(label);

        // Loss gradient at the logits, through the softmax Jacobian.
        let dlogits: Array1<f64> = match hp.loss {
            LossKind::MeanAbsoluteError => {
                let dp = [
                    signum_or_zero(fwd.probs[0] - y[0]) / 2.0,
                    signum_or_zero(fwd.probs[1] - y[1]) / 2.0,
                ];
                let weighted: f64 = dp[0] * fwd.probs[0] + dp[1] * fwd.probs[1];
                Array1::from_vec(vec![
                    fwd.probs[0] * (dp[0] - weighted),
                    fwd.probs[1] * (dp[1] - weighted),
                ])
            }
            LossKind::CrossEntropy => {
                Array1::from_vec(vec![fwd.probs[0] - y[0], fwd.probs[1] - y[1]])
            }
        };

        // Output layer.
        let mut dad = Array1::<f64>::zeros(hp.dense_units);
        for (u, &a) in fwd.ad.iter().enumerate() {
            if a != 0.0 {
                let mut row = grads.output_weight.row_mut(u);
                row.scaled_add(a, &dlogits);
            }
            dad[u] = self.params.output_weight.row(u).dot(&dlogits);
        }
        grads.output_bias += &dlogits;

        // Dense layer (ReLU).
        let dzd: Array1<f64> = dad
            .iter()
            .zip(fwd.zd.iter())
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let mut dflat = Array1::<f64>::zeros(fwd.dropped.len());
        for (j, &v) in fwd.dropped.iter().enumerate() {
            if v != 0.0 {
                let mut row = grads.dense_weight.row_mut(j);
                row.scaled_add(v, &dzd);
            }
            dflat[j] = self.params.dense_weight.row(j).dot(&dzd);
        }
        grads.dense_bias += &dzd;
        if let Some(mask) = mask {
            dflat *= mask;
        }

        // Un-flatten, pool2 backward, conv2 ReLU.
        let filters = hp.conv_filters;
        let mut dz2 = Array2::<f64>::zeros(fwd.z2.dim());
        for (j, &g) in dflat.iter().enumerate() {
            let (q, c) = (j / filters, j % filters);
            dz2[(fwd.arg2[(q, c)], c)] += g;
        }
        dz2.zip_mut_with(&fwd.z2, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });

        // Conv2 parameter and input gradients.
        let kw = hp.kernel_width;
        let l2 = dz2.nrows();
        let mut dm1 = Array2::<f64>::zeros(fwd.m1.dim());
        for u in 0..kw {
            for o in 0..filters {
                let mut kgrad = grads.conv2_kernel.slice_mut(s![u, o, ..]);
                let krow = self.params.conv2_kernel.slice(s![u, o, ..]);
                for p in 0..l2 {
                    let g = dz2[(p, o)];
                    if g != 0.0 {
                        kgrad.scaled_add(g, &fwd.m1.row(p + u));
                        let mut drow = dm1.row_mut(p + u);
                        drow.scaled_add(g, &krow);
                    }
                }
            }
        }
        for o in 0..filters {
            grads.conv2_bias[o] += dz2.column(o).sum();
        }

        // Pool1 backward, conv1 ReLU.
        let mut dz1 = Array2::<f64>::zeros(fwd.a1.dim());
        for q in 0..dm1.nrows() {
            for c in 0..filters {
                dz1[(fwd.arg1[(q, c)], c)] += dm1[(q, c)];
            }
        }
        dz1.zip_mut_with(&fwd.z1, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });

        // Conv1 parameter gradients (input gradients are not needed).
        let l1 = dz1.nrows();
        for u in 0..kw {
            for o in 0..filters {
                let mut kgrad = grads.conv1_kernel.slice_mut(s![u, o, ..]);
                for p in 0..l1 {
                    let g = dz1[(p, o)];
                    if g != 0.0 {
                        kgrad.scaled_add(g, &input.row(p + u));
                    }
                }
            }
        }
        for o in 0..filters {
            grads.conv1_bias[o] += dz1.column(o).sum();
        }

        loss
    }

    /// Classify one padded input with dropout disabled.
    pub fn predict(&self, task_id: &str, input: &Array2<f64>) -> Result<Prediction> {
        self.predict_with_threshold(task_id, input, 0.5)
    }

    /// [`CnnModel::predict`] with an explicit decision threshold on
    /// p_inconsistent (a tie goes to consistent).
    pub fn predict_with_threshold(
        &self,
        task_id: &str,
        input: &Array2<f64>,
        threshold: f64,
    ) -> Result<Prediction> {
        self.check_shape(input)?;
        let fwd = self.forward_example(input, None);
        let predicted_label = if fwd.probs[0] > threshold {
            Label::Inconsistent
        } else {
            Label::Consistent
        };
        Ok(Prediction {
            task_id: task_id.to_string(),
            p_inconsistent: fwd.probs[0],
            p_consistent: fwd.probs[1],
            predicted_label,
            threshold,
        })
    }

    fn accuracy(&self, inputs: &[Array2<f64>], labels: &[Label]) -> f64 {
        let correct = inputs
            .iter()
            .zip(labels)
            .filter(|(input, label)| {
                let fwd = self.forward_example(input, None);
                let predicted = if fwd.probs[1] >= 0.5 {
                    Label::Consistent
                } else {
                    Label::Inconsistent
                };
                predicted == **label
            })
            .count();
        correct as f64 / inputs.len() as f64
    }
}

/// Train a classifier on padded input matrices.
///
/// Mini-batch SGD with seeded shuffling and dropout; after each epoch the
/// model is scored on the test split with dropout off, and the snapshot
/// with the best test accuracy is returned. Deterministic per seed.
#[allow(clippy::too_many_arguments)]
pub fn train(
    module_key: &str,
    train_inputs: &[Array2<f64>],
    train_labels: &[Label],
    test_inputs: &[Array2<f64>],
    test_labels: &[Label],
    hp: &CnnHyperparameters,
    padding: PaddingSpec,
    seed: u64,
) -> Result<CnnModel> {
    if train_inputs.is_empty() || train_inputs.len() != train_labels.len() {
        return Err(Error::LengthMismatch {
            predictions: train_inputs.len(),
            truths: train_labels.len(),
        });
    }
    let has_both = train_labels.contains(&Label::Consistent)
        && train_labels.contains(&Label::Inconsistent);
    if !has_both {
        return Err(Error::SingleClassTraining(module_key.to_string()));
    }
    let (_, _, _, p2) = hp.stage_lengths(padding.max_length)?;
    let input_dim = train_inputs[0].ncols();
    let flat_len = p2 * hp.conv_filters;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let params = CnnParams::init(hp, input_dim, flat_len, &mut rng);
    let mut model = CnnModel {
        module_key: module_key.to_string(),
        hp: hp.clone(),
        padding,
        input_dim,
        params,
        train_history: Vec::with_capacity(hp.epochs),
        best_epoch: 0,
        seed,
    };
    for input in train_inputs.iter().chain(test_inputs) {
        model.check_shape(input)?;
    }

    let keep = 1.0 - hp.dropout_rate;
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut best_params = model.params.clone();
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let inputs: Vec<Array2<f64>> =
                batch.iter().map(|&i| train_inputs[i].clone()).collect();
            let labels: Vec<Label> = batch.iter().map(|&i| train_labels[i]).collect();
            let masks: Vec<Array1<f64>> = batch
                .iter()
                .map(|_| {
                    Array1::from_shape_fn(flat_len, |_| {
                        if hp.dropout_rate == 0.0 || rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                })
                .collect();
            let (_, grads) = model.loss_and_grads(&inputs, &labels, DropoutMode::Fixed(&masks))?;
            apply_sgd(&mut model.params, &grads, hp.learning_rate);
        }

        let train_loss = model.loss(train_inputs, train_labels, DropoutMode::Disabled)?;
        if !train_loss.is_finite() || !model.params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                loss: train_loss,
            });
        }
        let train_accuracy = model.accuracy(train_inputs, train_labels);
        let test_accuracy = if test_inputs.is_empty() {
            train_accuracy
        } else {
            model.accuracy(test_inputs, test_labels)
        };
        model.train_history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
        });
        // >= keeps the most-trained snapshot among accuracy ties.
        if test_accuracy >= best_accuracy {
            best_accuracy = test_accuracy;
            best_params = model.params.clone();
            best_epoch = epoch;
        }
    }

    model.params = best_params;
    model.best_epoch = best_epoch;
    Ok(model)
}

fn apply_sgd(params: &mut CnnParams, grads: &Gradients, rate: f64) {
    params.conv1_kernel.scaled_add(-rate, &grads.conv1_kernel);
    params.conv1_bias.scaled_add(-rate, &grads.conv1_bias);
    params.conv2_kernel.scaled_add(-rate, &grads.conv2_kernel);
    params.conv2_bias.scaled_add(-rate, &grads.conv2_bias);
    params.dense_weight.scaled_add(-rate, &grads.dense_weight);
    params.dense_bias.scaled_add(-rate, &grads.dense_bias);
    params.output_weight.scaled_add(-rate, &grads.output_weight);
    params.output_bias.scaled_add(-rate, &grads.output_bias);
}

const WEIGHTS_HEADER: &str = "tasklint-cnn v1";
const TENSOR_ORDER: [&str; 8] = [
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
    "output.weight",
    "output.bias",
];

/// Persist the model: hyperparameters, padding, history, then each tensor
/// as a shape line followed by its row-major values.
pub fn save_model(model: &CnnModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(WEIGHTS_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "module_key\t{}\n",
        textio::escape_token(&model.module_key)
    ));
    out.push_str(&format!("seed\t{}\n", model.seed));
    out.push_str(&format!("input_dim\t{}\n", model.input_dim));
    let hp = &model.hp;
    out.push_str(&format!("conv_filters\t{}\n", hp.conv_filters));
    out.push_str(&format!("kernel_width\t{}\n", hp.kernel_width));
    out.push_str(&format!("pool_width\t{}\n", hp.pool_width));
    out.push_str(&format!("l2_lambda\t{}\n", hp.l2_lambda));
    out.push_str(&format!("dropout_rate\t{}\n", hp.dropout_rate));
    out.push_str(&format!("dense_units\t{}\n", hp.dense_units));
    out.push_str(&format!("learning_rate\t{}\n", hp.learning_rate));
    out.push_str(&format!("batch_size\t{}\n", hp.batch_size));
    out.push_str(&format!("epochs\t{}\n", hp.epochs));
    out.push_str(&format!("loss\t{}\n", hp.loss.as_str()));
    out.push_str(&format!(
        "padding\t{} {} {} {}\n",
        model.padding.max_length,
        model.padding.mean_len,
        model.padding.std_len,
        model.padding.truncated_fraction
    ));
    out.push_str(&format!("best_epoch\t{}\n", model.best_epoch));
    for stats in &model.train_history {
        out.push_str(&format!(
            "history\t{} {} {} {}\n",
            stats.epoch, stats.train_loss, stats.train_accuracy, stats.test_accuracy
        ));
    }
    for (name, values) in model.params.flat_tensors() {
        let shape = model.params.tensor_shape(name);
        let dims = shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!("tensor\t{name}\t{dims}\n"));
        let mut first = true;
        for value in values {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{value}"));
            first = false;
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Load a model saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<CnnModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |message: String| Error::MalformedFile {
        path: path.to_path_buf(),
        what: "cnn model",
        message,
    };
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| bad(format!("missing {what}")))
    };
    if next_line("header")? != WEIGHTS_HEADER {
        return Err(bad("unexpected header".into()));
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
    let parse_usize = |text: String, what: &str| -> Result<usize> {
        text.parse().map_err(|e| bad(format!("bad {what}: {e}")))
    };
    let parse_f64 = |text: String, what: &str| -> Result<f64> {
        text.parse().map_err(|e| bad(format!("bad {what}: {e}")))
    };
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|e| bad(format!("bad seed: {e}")))?;
    let input_dim = parse_usize(field("input_dim")?, "input_dim")?;
    let hp = CnnHyperparameters {
        conv_filters: parse_usize(field("conv_filters")?, "conv_filters")?,
        kernel_width: parse_usize(field("kernel_width")?, "kernel_width")?,
        pool_width: parse_usize(field("pool_width")?, "pool_width")?,
        l2_lambda: parse_f64(field("l2_lambda")?, "l2_lambda")?,
        dropout_rate: parse_f64(field("dropout_rate")?, "dropout_rate")?,
        dense_units: parse_usize(field("dense_units")?, "dense_units")?,
        learning_rate: parse_f64(field("learning_rate")?, "learning_rate")?,
        batch_size: parse_usize(field("batch_size")?, "batch_size")?,
        epochs: parse_usize(field("epochs")?, "epochs")?,
        loss: LossKind::parse(&field("loss")?).ok_or_else(|| bad("bad loss kind".into()))?,
    };
    let padding_line = field("padding")?;
    let pad_fields: Vec<&str> = padding_line.split(' ').collect();
    if pad_fields.len() != 4 {
        return Err(bad("padding line needs 4 fields".into()));
    }
    let padding = PaddingSpec {
        max_length: pad_fields[0]
            .parse()
            .map_err(|e| bad(format!("bad max_length: {e}")))?,
        mean_len: pad_fields[1]
            .parse()
            .map_err(|e| bad(format!("bad mean: {e}")))?,
        std_len: pad_fields[2]
            .parse()
            .map_err(|e| bad(format!("bad std: {e}")))?,
        truncated_fraction: pad_fields[3]
            .parse()
            .map_err(|e| bad(format!("bad truncated fraction: {e}")))?,
    };
    let best_epoch = parse_usize(field("best_epoch")?, "best_epoch")?;

    let mut train_history = Vec::new();
    let pending: String;
    loop {
        let line = next_line("history or tensor")?;
        if let Some(rest) = line.strip_prefix("history\t") {
            let values: Vec<&str> = rest.split(' ').collect();
            if values.len() != 4 {
                return Err(bad("history line needs 4 values".into()));
            }
            train_history.push(EpochStats {
                epoch: values[0]
                    .parse()
                    .map_err(|e| bad(format!("bad history epoch: {e}")))?,
                train_loss: values[1]
                    .parse()
                    .map_err(|e| bad(format!("bad history loss: {e}")))?,
                train_accuracy: values[2]
                    .parse()
                    .map_err(|e| bad(format!("bad history accuracy: {e}")))?,
                test_accuracy: values[3]
                    .parse()
                    .map_err(|e| bad(format!("bad history accuracy: {e}")))?,
            });
        } else {
            pending = line;
            break;
        }
    }

    let mut tensors: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for (idx, name) in TENSOR_ORDER.iter().enumerate() {
        let header = if idx == 0 {
            pending.clone()
        } else {
            next_line("tensor header")?
        };
        let parts: Vec<&str> = header.split('\t').collect();
        if parts.len() != 3 || parts[0] != "tensor" || parts[1] != *name {
            return Err(bad(format!("expected tensor `{name}`, found `{header}`")));
        }
        let shape: Vec<usize> = parts[2]
            .split(' ')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("bad tensor shape: {e}")))?;
        let values_line = next_line("tensor values")?;
        let values: Vec<f64> = values_line
            .split(' ')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("bad tensor value: {e}")))?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(bad(format!(
                "tensor `{name}` has {} values for shape {shape:?}",
                values.len()
            )));
        }
        tensors.push((shape, values));
    }

    let arr3 = |t: &(Vec<usize>, Vec<f64>)| -> Result<Array3<f64>> {
        if t.0.len() != 3 {
            return Err(bad(format!("expected 3-d tensor, found shape {:?}", t.0)));
        }
        Array3::from_shape_vec((t.0[0], t.0[1], t.0[2]), t.1.clone())
            .map_err(|e| bad(format!("bad tensor data: {e}")))
    };
    let arr2 = |t: &(Vec<usize>, Vec<f64>)| -> Result<Array2<f64>> {
        if t.0.len() != 2 {
            return Err(bad(format!("expected 2-d tensor, found shape {:?}", t.0)));
        }
        Array2::from_shape_vec((t.0[0], t.0[1]), t.1.clone())
            .map_err(|e| bad(format!("bad tensor data: {e}")))
    };
    let arr1 = |t: &(Vec<usize>, Vec<f64>)| -> Array1<f64> { Array1::from_vec(t.1.clone()) };

    let params = CnnParams {
        conv1_kernel: arr3(&tensors[0])?,
        conv1_bias: arr1(&tensors[1]),
        conv2_kernel: arr3(&tensors[2])?,
        conv2_bias: arr1(&tensors[3]),
        dense_weight: arr2(&tensors[4])?,
        dense_bias: arr1(&tensors[5]),
        output_weight: arr2(&tensors[6])?,
        output_bias: arr1(&tensors[7]),
    };
    hp.stage_lengths(padding.max_length)?;
    Ok(CnnModel {
        module_key,
        hp,
        padding,
        input_dim,
        params,
        train_history,
        best_epoch,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize) -> Vec<String> {
        (0..len).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn padding_of_constant_lengths() {
        let spec = compute_padding(&[seq(10), seq(10), seq(10)]).unwrap();
        assert_eq!(spec.max_length, 10);
        assert_eq!(spec.mean_len, 10.0);
        assert_eq!(spec.std_len, 0.0);
        assert_eq!(spec.truncated_fraction, 0.0);
    }

    #[test]
    fn padding_hand_computed_fixture() {
        let spec = compute_padding(&[seq(80), seq(90), seq(100), seq(110)]).unwrap();
        assert_eq!(spec.mean_len, 95.0);
        assert!((spec.std_len - 125.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(spec.max_length, 107);
        assert_eq!(spec.truncated_fraction, 0.25);
    }

    #[test]
    fn padding_rejects_empty_training_set() {
        assert!(matches!(
            compute_padding(&[]).unwrap_err(),
            Error::EmptyTrainingSet
        ));
    }

    #[test]
    fn pool_output_is_window_permutation_invariant() {
        let input = Array2::from_shape_vec(
            (6, 2),
            vec![1.0, 9.0, 5.0, 2.0, 3.0, 3.0, 4.0, 8.0, 7.0, 0.0, 6.0, 1.0],
        )
        .unwrap();
        let (pooled, _) = max_pool(&input, 2);
        // Swap the two rows inside each window.
        let mut permuted = input.clone();
        for q in 0..3 {
            for c in 0..2 {
                permuted[(2 * q, c)] = input[(2 * q + 1, c)];
                permuted[(2 * q + 1, c)] = input[(2 * q, c)];
            }
        }
        let (pooled_permuted, _) = max_pool(&permuted, 2);
        assert_eq!(pooled, pooled_permuted);
    }

    #[test]
    fn pool_drops_trailing_incomplete_window() {
        let input = Array2::from_shape_vec((5, 1), vec![1.0, 2.0, 3.0, 4.0, 99.0]).unwrap();
        let (pooled, arg) = max_pool(&input, 2);
        assert_eq!(pooled.nrows(), 2);
        assert_eq!(pooled[(0, 0)], 2.0);
        assert_eq!(arg[(1, 0)], 3);
    }

    fn small_hp(epochs: usize) -> CnnHyperparameters {
        CnnHyperparameters {
            conv_filters: 4,
            kernel_width: 5,
            pool_width: 2,
            l2_lambda: 0.01,
            dropout_rate: 0.5,
            dense_units: 16,
            learning_rate: 0.05,
            batch_size: 8,
            epochs,
            loss: LossKind::MeanAbsoluteError,
        }
    }

    fn pad(max_length: usize) -> PaddingSpec {
        PaddingSpec {
            max_length,
            mean_len: max_length as f64,
            std_len: 0.0,
            truncated_fraction: 0.0,
        }
    }

    /// Two linearly separable input templates plus small per-example noise.
    fn separable_dataset(n_per_class: usize, seed: u64) -> (Vec<Array2<f64>>, Vec<Label>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class * 2 {
            let label = if i % 2 == 0 {
                Label::Consistent
            } else {
                Label::Inconsistent
            };
            let center = if label == Label::Consistent { 0.5 } else { -0.5 };
            let input =
                Array2::from_shape_fn((16, 6), |_| center + (rng.random::<f64>() - 0.5) * 0.1);
            inputs.push(input);
            labels.push(label);
        }
        (inputs, labels)
    }

    #[test]
    fn separable_toy_data_trains_to_perfect_accuracy() {
        let (inputs, labels) = separable_dataset(16, 3);
        let model = train("toy", &inputs, &labels, &[], &[], &small_hp(50), pad(16), 42).unwrap();
        let best = &model.train_history[model.best_epoch];
        assert_eq!(
            best.train_accuracy, 1.0,
            "never reached perfect training accuracy: {best:?}"
        );
    }

    #[test]
    fn converged_model_memorizes_and_generalizes_on_toy_data() {
        let (inputs, labels) = separable_dataset(16, 3);
        let model = train("toy", &inputs, &labels, &[], &[], &small_hp(150), pad(16), 42).unwrap();
        // Held-out examples from the same template distribution.
        let (held_out, held_labels) = separable_dataset(2, 999);
        for (input, label) in held_out.iter().zip(&held_labels) {
            let prediction = model.predict("h", input).unwrap();
            assert_eq!(prediction.predicted_label, *label);
            let p = if *label == Label::Consistent {
                prediction.p_consistent
            } else {
                prediction.p_inconsistent
            };
            assert!(p > 0.9, "expected confident prediction, got {p}");
        }
        // A duplicate of a consistent training example stays consistent.
        let idx = labels.iter().position(|l| *l == Label::Consistent).unwrap();
        let duplicate = model.predict("dup", &inputs[idx]).unwrap();
        assert_eq!(duplicate.predicted_label, Label::Consistent);
    }

    #[test]
    fn all_zero_inputs_stay_near_chance_without_crashing() {
        let inputs: Vec<Array2<f64>> = (0..20).map(|_| Array2::zeros((16, 6))).collect();
        let labels: Vec<Label> = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    Label::Consistent
                } else {
                    Label::Inconsistent
                }
            })
            .collect();
        let model = train("zero", &inputs, &labels, &[], &[], &small_hp(5), pad(16), 1).unwrap();
        let accuracy = model.train_history.last().unwrap().train_accuracy;
        assert!((0.3..=0.7).contains(&accuracy), "accuracy {accuracy}");
    }

    #[test]
    fn predict_probabilities_sum_to_one() {
        let (inputs, labels) = separable_dataset(8, 5);
        let model = train("toy", &inputs, &labels, &[], &[], &small_hp(3), pad(16), 7).unwrap();
        for input in inputs.iter().take(4) {
            let p = model.predict("x", input).unwrap();
            assert!((p.p_inconsistent + p.p_consistent - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (inputs, labels) = separable_dataset(8, 5);
        let model = train("toy", &inputs, &labels, &[], &[], &small_hp(2), pad(16), 7).unwrap();
        let wrong = Array2::<f64>::zeros((9, 6));
        assert!(matches!(
            model.predict("x", &wrong).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn single_class_training_is_an_error() {
        let inputs: Vec<Array2<f64>> = (0..6).map(|_| Array2::zeros((16, 6))).collect();
        let labels = vec![Label::Consistent; 6];
        assert!(matches!(
            train("m", &inputs, &labels, &[], &[], &small_hp(2), pad(16), 7).unwrap_err(),
            Error::SingleClassTraining(_)
        ));
    }

    #[test]
    fn too_short_padding_is_an_error() {
        let (inputs, labels) = separable_dataset(4, 5);
        let inputs: Vec<Array2<f64>> = inputs
            .iter()
            .map(|m| m.slice(s![..8, ..]).to_owned())
            .collect();
        let err = train("m", &inputs, &labels, &[], &[], &small_hp(2), pad(8), 7).unwrap_err();
        match err {
            Error::SequenceBudgetTooSmall { max_length, min } => {
                assert_eq!(max_length, 8);
                assert_eq!(min, 16);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn training_is_bitwise_deterministic_per_seed() {
        let (inputs, labels) = separable_dataset(10, 4);
        let run =
            |seed| train("toy", &inputs, &labels, &[], &[], &small_hp(4), pad(16), seed).unwrap();
        let a = run(11);
        let b = run(11);
        assert_eq!(a.params, b.params);
        let dir = tempfile::tempdir().unwrap();
        save_model(&a, &dir.path().join("a.txt")).unwrap();
        save_model(&b, &dir.path().join("b.txt")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.txt")).unwrap(),
            fs::read(dir.path().join("b.txt")).unwrap()
        );
        let c = run(12);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn predict_reproduces_best_epoch_train_accuracy() {
        let (inputs, labels) = separable_dataset(12, 8);
        let (test_inputs, test_labels) = separable_dataset(4, 9);
        let model = train(
            "toy",
            &inputs,
            &labels,
            &test_inputs,
            &test_labels,
            &small_hp(6),
            pad(16),
            21,
        )
        .unwrap();
        let recorded = model.train_history[model.best_epoch].train_accuracy;
        let recomputed = inputs
            .iter()
            .zip(&labels)
            .filter(|(input, label)| {
                model.predict("x", input).unwrap().predicted_label == **label
            })
            .count() as f64
            / inputs.len() as f64;
        assert_eq!(recorded, recomputed);
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let (inputs, labels) = separable_dataset(8, 5);
        let model = train("demo", &inputs, &labels, &[], &[], &small_hp(3), pad(16), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.txt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.module_key, model.module_key);
        assert_eq!(loaded.hp, model.hp);
        assert_eq!(loaded.padding, model.padding);
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.train_history, model.train_history);
        assert_eq!(loaded.best_epoch, model.best_epoch);
    }

    /// Central finite differences over every element of every tensor.
    fn gradient_check(loss_kind: LossKind, with_dropout_mask: bool) {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let hp = CnnHyperparameters {
            conv_filters: 3,
            kernel_width: 5,
            pool_width: 2,
            l2_lambda: 0.01,
            dropout_rate: 0.5,
            dense_units: 8,
            learning_rate: 0.01,
            batch_size: 2,
            epochs: 1,
            loss: loss_kind,
        };
        let max_length = 16;
        let d = 5;
        let (_, _, _, p2) = hp.stage_lengths(max_length).unwrap();
        let flat_len = p2 * hp.conv_filters;
        let params = CnnParams::init(&hp, d, flat_len, &mut rng);
        let mut model = CnnModel {
            module_key: "gradcheck".into(),
            hp,
            padding: pad(max_length),
            input_dim: d,
            params,
            train_history: Vec::new(),
            best_epoch: 0,
            seed: 17,
        };
        let inputs: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((max_length, d), |_| rng.random::<f64>() - 0.5))
            .collect();
        let labels = vec![Label::Consistent, Label::Inconsistent];
        let keep = 1.0 - model.hp.dropout_rate;
        let masks: Vec<Array1<f64>> = (0..2)
            .map(|_| {
                Array1::from_shape_fn(flat_len, |_| {
                    if !with_dropout_mask {
                        1.0
                    } else if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect();

        let (_, grads) = model
            .loss_and_grads(&inputs, &labels, DropoutMode::Fixed(&masks))
            .unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grads
            .flat_tensors()
            .iter()
            .map(|(name, values)| (name.to_string(), values.to_vec()))
            .collect();

        let eps = 1e-5;
        for (tensor_idx, (name, values)) in analytic.iter().enumerate() {
            for i in 0..values.len() {
                let saved = {
                    let mut tensors = model.params.flat_tensors_mut();
                    let v = tensors[tensor_idx].1[i];
                    tensors[tensor_idx].1[i] = v + eps;
                    v
                };
                let plus = model
                    .loss(&inputs, &labels, DropoutMode::Fixed(&masks))
                    .unwrap();
                {
                    let tensors = model.params.flat_tensors_mut();
                    tensors.into_iter().nth(tensor_idx).unwrap().1[i] = saved - eps;
                }
                let minus = model
                    .loss(&inputs, &labels, DropoutMode::Fixed(&masks))
                    .unwrap();
                {
                    let tensors = model.params.flat_tensors_mut();
                    tensors.into_iter().nth(tensor_idx).unwrap().1[i] = saved;
                }
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic_value = values[i];
                let denom = analytic_value.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic_value - numeric).abs() / denom < 1e-4,
                    "{name}[{i}]: analytic {analytic_value}, numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_mae() {
        gradient_check(LossKind::MeanAbsoluteError, false);
    }

    #[test]
    fn gradients_match_finite_differences_mae_with_dropout_mask() {
        gradient_check(LossKind::MeanAbsoluteError, true);
    }

    #[test]
    fn gradients_match_finite_differences_cross_entropy() {
        gradient_check(LossKind::CrossEntropy, false);
    }
}
