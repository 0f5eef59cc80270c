//! Binary-classification metrics with the inconsistent class as positive.

use serde::{Deserialize, Serialize};

use crate::cnn::Prediction;
use crate::dataset::Label;
use crate::error::{Error, Result};

/// Confusion counts; the positive class is `inconsistent`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Precision/recall/F1 for one class treated as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// The full per-module evaluation row set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub module_key: String,
    pub inconsistent: ClassMetrics,
    pub consistent: ClassMetrics,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: f64,
    pub counts: ConfusionCounts,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

fn ratio(numerator: usize, denominator: usize, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if denominator == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

fn f1_of(precision: f64, recall: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if precision + recall == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn class_metrics(
    tp: usize,
    fp: usize,
    fn_: usize,
    prefix: &str,
    degenerate: &mut Vec<String>,
) -> ClassMetrics {
    let precision = ratio(tp, tp + fp, &format!("{prefix}_precision"), degenerate);
    let recall = ratio(tp, tp + fn_, &format!("{prefix}_recall"), degenerate);
    let f1 = f1_of(precision, recall, &format!("{prefix}_f1"), degenerate);
    ClassMetrics {
        precision,
        recall,
        f1,
    }
}

/// Compute accuracy, per-class precision/recall/F1, MCC, and AUC from
/// threshold predictions and their true labels. Zero-denominator metrics
/// come back as 0 and are listed in `degenerate`.
pub fn compute_metrics(
    module_key: &str,
    predictions: &[Prediction],
    truths: &[Label],
) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (pred, truth) in predictions.iter().zip(truths) {
        let predicted_inconsistent = pred.predicted_label == Label::Inconsistent;
        match (predicted_inconsistent, truth) {
            (true, Label::Inconsistent) => counts.true_pos += 1,
            (true, Label::Consistent) => counts.false_pos += 1,
            (false, Label::Consistent) => counts.true_neg += 1,
            (false, Label::Inconsistent) => counts.false_neg += 1,
        }
    }

    let mut degenerate = Vec::new();
    let inconsistent = class_metrics(
        counts.true_pos,
        counts.false_pos,
        counts.false_neg,
        "inconsistent",
        &mut degenerate,
    );
    // Consistent as positive: swap the roles of the counts.
    let consistent = class_metrics(
        counts.true_neg,
        counts.false_neg,
        counts.false_pos,
        "consistent",
        &mut degenerate,
    );
    let accuracy = ratio(
        counts.true_pos + counts.true_neg,
        counts.total(),
        "accuracy",
        &mut degenerate,
    );
    let mcc = matthews(&counts, &mut degenerate);
    let scores: Vec<f64> = predictions.iter().map(|p| p.p_inconsistent).collect();
    let auc = compute_auc(&scores, truths)?;

    Ok(MetricsReport {
        module_key: module_key.to_string(),
        inconsistent,
        consistent,
        accuracy,
        mcc,
        auc,
        counts,
        degenerate,
    })
}

fn matthews(counts: &ConfusionCounts, degenerate: &mut Vec<String>) -> f64 {
    let tp = counts.true_pos as f64;
    let fp = counts.false_pos as f64;
    let tn = counts.true_neg as f64;
    let fn_ = counts.false_neg as f64;
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if denom == 0.0 {
        degenerate.push("mcc".to_string());
        0.0
    } else {
        (tp * tn - fp * fn_) / denom
    }
}

/// Rank-based AUC (the Mann-Whitney statistic): the probability that a
/// random positive outscores a random negative, counting ties as half.
pub fn compute_auc(scores: &[f64], truths: &[Label]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::LengthMismatch {
            predictions: scores.len(),
            truths: truths.len(),
        });
    }
    let n_pos = truths.iter().filter(|t| **t == Label::Inconsistent).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassTruth);
    }

    // Average ranks over tied scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = truths
        .iter()
        .zip(&ranks)
        .filter(|(t, _)| **t == Label::Inconsistent)
        .map(|(_, r)| r)
        .sum();
    let auc =
        (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}

/// One operating point of the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

/// ROC curve points from (0,0) to (1,1), one per distinct score, for
/// external plotting.
pub fn roc_points(scores: &[f64], truths: &[Label]) -> Result<Vec<RocPoint>> {
    let n_pos = truths.iter().filter(|t| **t == Label::Inconsistent).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassTruth);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        true_positive_rate: 0.0,
        false_positive_rate: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            match truths[order[i]] {
                Label::Inconsistent => tp += 1,
                Label::Consistent => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            true_positive_rate: tp as f64 / n_pos as f64,
            false_positive_rate: fp as f64 / n_neg as f64,
        });
    }
    Ok(points)
}

const TABLE_ROWS: [&str; 9] = [
    "Inconsistent Precision",
    "Inconsistent Recall",
    "Inconsistent F1",
    "Consistent Precision",
    "Consistent Recall",
    "Consistent F1",
    "Accuracy",
    "MCC",
    "AUC",
];

fn report_values(report: &MetricsReport) -> [f64; 9] {
    [
        report.inconsistent.precision,
        report.inconsistent.recall,
        report.inconsistent.f1,
        report.consistent.precision,
        report.consistent.recall,
        report.consistent.f1,
        report.accuracy,
        report.mcc,
        report.auc,
    ]
}

/// Render the aligned results table: metric rows, one column per module.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let label_width = TABLE_ROWS.iter().map(|r| r.len()).max().unwrap_or(0);
    let col_widths: Vec<usize> = reports
        .iter()
        .map(|r| r.module_key.len().max(6))
        .collect();
    let mut out = String::new();
    out.push_str(&format!("{:label_width$}", "Metric"));
    for (report, width) in reports.iter().zip(&col_widths) {
        out.push_str(&format!("  {:>width$}", report.module_key, width = width));
    }
    out.push('\n');
    for (row_idx, row) in TABLE_ROWS.iter().enumerate() {
        out.push_str(&format!("{row:label_width$}"));
        for (report, width) in reports.iter().zip(&col_widths) {
            let value = report_values(report)[row_idx];
            out.push_str(&format!("  {:>width$.3}", value, width = width));
        }
        out.push('\n');
    }
    out
}

/// Machine-readable table: one row per metric, tab-separated module columns.
pub fn render_table_tsv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("metric");
    for report in reports {
        out.push('\t');
        out.push_str(&report.module_key);
    }
    out.push('\n');
    for (row_idx, row) in TABLE_ROWS.iter().enumerate() {
        out.push_str(row);
        for report in reports {
            out.push('\t');
            out.push_str(&format!("{}", report_values(report)[row_idx]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::Prediction;

    fn prediction(p_inconsistent: f64) -> Prediction {
        Prediction::from_p_inconsistent("t", p_inconsistent, 0.5)
    }

    fn labels(spec: &[(Label, usize)]) -> Vec<Label> {
        spec.iter()
            .flat_map(|(label, n)| std::iter::repeat_n(*label, *n))
            .collect()
    }

    #[test]
    fn perfect_predictions_hit_all_ones() {
        let truths = labels(&[(Label::Inconsistent, 5), (Label::Consistent, 5)]);
        let predictions: Vec<Prediction> = truths
            .iter()
            .map(|t| prediction(if *t == Label::Inconsistent { 0.9 } else { 0.1 }))
            .collect();
        let report = compute_metrics("m", &predictions, &truths).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.mcc, 1.0);
        assert_eq!(report.inconsistent.f1, 1.0);
        assert_eq!(report.consistent.f1, 1.0);
        assert_eq!(report.auc, 1.0);
        assert!(report.degenerate.is_empty());
    }

    #[test]
    fn hand_computed_counts_match() {
        // tp=81, fn=19, tn=89, fp=11.
        let mut predictions = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..81 {
            predictions.push(prediction(0.9));
            truths.push(Label::Inconsistent);
        }
        for _ in 0..19 {
            predictions.push(prediction(0.1));
            truths.push(Label::Inconsistent);
        }
        for _ in 0..89 {
            predictions.push(prediction(0.1));
            truths.push(Label::Consistent);
        }
        for _ in 0..11 {
            predictions.push(prediction(0.9));
            truths.push(Label::Consistent);
        }
        let report = compute_metrics("shell", &predictions, &truths).unwrap();
        assert!((report.inconsistent.precision - 81.0 / 92.0).abs() < 1e-12);
        assert!((report.inconsistent.precision - 0.880).abs() < 5e-3);
        assert!((report.inconsistent.recall - 0.810).abs() < 1e-12);
        assert!((report.accuracy - 0.85).abs() < 1e-12);
        assert_eq!(
            report.counts,
            ConfusionCounts {
                true_pos: 81,
                false_pos: 11,
                true_neg: 89,
                false_neg: 19
            }
        );
    }

    #[test]
    fn one_class_predictions_on_balanced_data() {
        let truths = labels(&[(Label::Inconsistent, 50), (Label::Consistent, 50)]);
        let predictions: Vec<Prediction> = (0..100).map(|_| prediction(0.2)).collect();
        let report = compute_metrics("m", &predictions, &truths).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.mcc, 0.0);
        assert!(report.degenerate.contains(&"mcc".to_string()));
        assert!(report
            .degenerate
            .contains(&"inconsistent_precision".to_string()));
        // All scores equal: AUC is all ties.
        assert_eq!(report.auc, 0.5);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let truths = labels(&[(Label::Inconsistent, 2)]);
        let err = compute_metrics("m", &[prediction(0.1)], &truths).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn auc_perfectly_separating_scores() {
        let scores = [0.8, 0.9, 0.2, 0.1];
        let truths = labels(&[(Label::Inconsistent, 2), (Label::Consistent, 2)]);
        assert_eq!(compute_auc(&scores, &truths).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let scores = [0.5; 6];
        let truths = labels(&[(Label::Inconsistent, 3), (Label::Consistent, 3)]);
        assert_eq!(compute_auc(&scores, &truths).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_pairwise_brute_force() {
        // pos {.9, .6}, neg {.7, .2}: wins (.9,.7) (.9,.2) (.6,.2), loses
        // (.6,.7) → 3/4. A tie case: pos {.9, .6}, neg {.6, .2} → 3.5/4.
        let truths = labels(&[(Label::Inconsistent, 2), (Label::Consistent, 2)]);
        let auc = compute_auc(&[0.9, 0.6, 0.7, 0.2], &truths).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        let auc_tied = compute_auc(&[0.9, 0.6, 0.6, 0.2], &truths).unwrap();
        assert!((auc_tied - 0.875).abs() < 1e-12);
    }

    #[test]
    fn auc_single_class_errors() {
        let truths = labels(&[(Label::Inconsistent, 3)]);
        assert!(matches!(
            compute_auc(&[0.1, 0.2, 0.3], &truths).unwrap_err(),
            Error::SingleClassTruth
        ));
    }

    #[test]
    fn mcc_magnitude_is_class_symmetric() {
        let truths = labels(&[(Label::Inconsistent, 30), (Label::Consistent, 20)]);
        let predictions: Vec<Prediction> = (0..50)
            .map(|i| prediction(if i % 3 == 0 { 0.9 } else { 0.1 }))
            .collect();
        let report = compute_metrics("m", &predictions, &truths).unwrap();
        // Swap classes everywhere.
        let swapped_truths: Vec<Label> = truths
            .iter()
            .map(|t| match t {
                Label::Inconsistent => Label::Consistent,
                Label::Consistent => Label::Inconsistent,
            })
            .collect();
        let swapped_predictions: Vec<Prediction> = predictions
            .iter()
            .map(|p| Prediction::from_p_inconsistent("t", p.p_consistent, 0.5))
            .collect();
        let swapped = compute_metrics("m", &swapped_predictions, &swapped_truths).unwrap();
        assert!((report.mcc.abs() - swapped.mcc.abs()).abs() < 1e-12);
    }

    #[test]
    fn table_contains_all_rows_and_modules() {
        let truths = labels(&[(Label::Inconsistent, 4), (Label::Consistent, 4)]);
        let predictions: Vec<Prediction> = truths
            .iter()
            .map(|t| prediction(if *t == Label::Inconsistent { 0.8 } else { 0.3 }))
            .collect();
        let a = compute_metrics("template", &predictions, &truths).unwrap();
        let b = compute_metrics("file", &predictions, &truths).unwrap();
        let table = render_table(&[a.clone(), b.clone()]);
        for row in TABLE_ROWS {
            assert!(table.contains(row), "missing row {row}");
        }
        assert!(table.contains("template"));
        assert!(table.contains("file"));
        let tsv = render_table_tsv(&[a, b]);
        assert_eq!(tsv.lines().count(), 10);
    }
}
