//! Classification metrics, cross-validated hyperparameter search and
//! permutation-based parameter importance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KrfError, Result};
use crate::forest::{fit_forest, Dataset, Forest, Hyperparams};
use crate::preprocess::{BqClass, ALL_CLASSES};

pub const N_CLASSES: usize = 6;

/// Rows are actual classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; N_CLASSES]; N_CLASSES],
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_pairs(actual: &[BqClass], predicted: &[BqClass]) -> Result<ConfusionMatrix> {
        if actual.len() != predicted.len() {
            return Err(KrfError::LengthMismatch(format!(
                "{} actual vs {} predicted",
                actual.len(),
                predicted.len()
            )));
        }
        if actual.is_empty() {
            return Err(KrfError::InsufficientData("no samples to score".into()));
        }
        let mut counts = [[0u64; N_CLASSES]; N_CLASSES];
        for (a, p) in actual.iter().zip(predicted) {
            counts[a.index()][p.index()] += 1;
        }
        Ok(ConfusionMatrix {
            counts,
            total: actual.len() as u64,
        })
    }

    pub fn count(&self, actual: BqClass, predicted: BqClass) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn row_sum(&self, actual: BqClass) -> u64 {
        self.counts[actual.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: BqClass) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    /// Macro average over classes present in the actual labels.
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

/// Accuracy, per-class precision/recall (0 when the denominator is 0) and
/// macro F1 over classes present in `actual`.
pub fn classification_metrics(
    actual: &[BqClass],
    predicted: &[BqClass],
) -> Result<ClassificationReport> {
    let confusion = ConfusionMatrix::from_pairs(actual, predicted)?;
    let mut precision = [0.0; N_CLASSES];
    let mut recall = [0.0; N_CLASSES];
    let mut f1 = [0.0; N_CLASSES];
    let mut macro_f1 = 0.0;
    let mut present = 0usize;
    for class in ALL_CLASSES {
        let i = class.index();
        let tp = confusion.count(class, class) as f64;
        let col = confusion.column_sum(class) as f64;
        let row = confusion.row_sum(class) as f64;
        precision[i] = if col > 0.0 { tp / col } else { 0.0 };
        recall[i] = if row > 0.0 { tp / row } else { 0.0 };
        f1[i] = if precision[i] + recall[i] > 0.0 {
            2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
        } else {
            0.0
        };
        if row > 0.0 {
            macro_f1 += f1[i];
            present += 1;
        }
    }
    macro_f1 /= present as f64;
    Ok(ClassificationReport {
        accuracy: confusion.diagonal_sum() as f64 / confusion.total() as f64,
        precision,
        recall,
        f1,
        macro_f1,
        confusion,
    })
}

/// One point of a threshold-swept curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Per-class one-vs-rest ROC AUC. Classes without both positives and
/// negatives in `actual` are excluded from the macro average and listed.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub per_class: [Option<f64>; N_CLASSES],
    pub macro_auc: Option<f64>,
    pub excluded: Vec<BqClass>,
}

/// Probability that a random positive outranks a random negative, with ties
/// counted half. Rank-based, equivalent to trapezoidal integration of the
/// ROC polyline.
pub fn binary_auc(scores: &[f64], is_positive: &[bool]) -> Option<f64> {
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = is_positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // 1-based average rank of the group
        for &idx in &order[i..j] {
            if is_positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Some(auc)
}

/// ROC polyline for one binary problem: points are (false positive rate,
/// true positive rate) at descending score thresholds, from (0,0) to (1,1).
pub fn roc_curve(scores: &[f64], is_positive: &[bool]) -> Vec<CurvePoint> {
    let n_pos = is_positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = is_positive.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if is_positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(CurvePoint {
            threshold,
            x: if n_neg > 0.0 { fp / n_neg } else { 0.0 },
            y: if n_pos > 0.0 { tp / n_pos } else { 0.0 },
        });
    }
    points
}

/// One-vs-rest ROC AUC per class from fraction-vector scores.
pub fn roc_auc(scores: &[[f64; N_CLASSES]], actual: &[BqClass]) -> Result<RocSummary> {
    if scores.len() != actual.len() {
        return Err(KrfError::LengthMismatch(format!(
            "{} score rows vs {} labels",
            scores.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(KrfError::InsufficientData("no samples to score".into()));
    }
    let mut per_class = [None; N_CLASSES];
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class in ALL_CLASSES {
        let column: Vec<f64> = scores.iter().map(|s| s[class.index()]).collect();
        let labels: Vec<bool> = actual.iter().map(|&a| a == class).collect();
        match binary_auc(&column, &labels) {
            Some(auc) => {
                per_class[class.index()] = Some(auc);
                sum += auc;
                counted += 1;
            }
            None => excluded.push(class),
        }
    }
    Ok(RocSummary {
        per_class,
        macro_auc: (counted > 0).then(|| sum / counted as f64),
        excluded,
    })
}

/// Average precision of one binary ranking: step-wise interpolation of the
/// precision–recall curve.
pub fn average_precision(scores: &[f64], is_positive: &[bool]) -> Result<f64> {
    if scores.len() != is_positive.len() {
        return Err(KrfError::LengthMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            is_positive.len()
        )));
    }
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(KrfError::PrUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut tp = 0.0;
    let mut seen = 0.0;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if is_positive[order[i]] {
                tp += 1.0;
            }
            seen += 1.0;
            i += 1;
        }
        let precision = tp / seen;
        let recall = tp / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Precision–recall polyline of one binary ranking as (recall, precision)
/// points at descending thresholds.
pub fn pr_curve(scores: &[f64], is_positive: &[bool]) -> Vec<CurvePoint> {
    let n_pos = is_positive.iter().filter(|&&p| p).count() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut points = Vec::new();
    let mut tp = 0.0;
    let mut seen = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if is_positive[order[i]] {
                tp += 1.0;
            }
            seen += 1.0;
            i += 1;
        }
        points.push(CurvePoint {
            threshold,
            x: if n_pos > 0.0 { tp / n_pos } else { 0.0 },
            y: tp / seen,
        });
    }
    points
}

/// Pool every (sample, class) pair into one binary ranking.
pub fn micro_pairs(scores: &[[f64; N_CLASSES]], actual: &[BqClass]) -> (Vec<f64>, Vec<bool>) {
    let mut pooled_scores = Vec::with_capacity(scores.len() * N_CLASSES);
    let mut pooled_labels = Vec::with_capacity(scores.len() * N_CLASSES);
    for (row, &a) in scores.iter().zip(actual) {
        for class in ALL_CLASSES {
            pooled_scores.push(row[class.index()]);
            pooled_labels.push(a == class);
        }
    }
    (pooled_scores, pooled_labels)
}

/// Micro-averaged precision–recall AUC (average precision over the pooled
/// per-class rankings).
pub fn pr_auc(scores: &[[f64; N_CLASSES]], actual: &[BqClass]) -> Result<f64> {
    if scores.len() != actual.len() {
        return Err(KrfError::LengthMismatch(format!(
            "{} score rows vs {} labels",
            scores.len(),
            actual.len()
        )));
    }
    let (pooled_scores, pooled_labels) = micro_pairs(scores, actual);
    average_precision(&pooled_scores, &pooled_labels)
}

/// Deterministic shuffled partition into `k` folds with sizes differing by at
/// most one.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(KrfError::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(KrfError::InsufficientData(format!(
            "{n} rows cannot fill {k} folds"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(indices[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best: Hyperparams,
    pub best_index: usize,
    /// Mean validation accuracy per grid candidate, in grid order.
    pub mean_scores: Vec<f64>,
}

fn subset(dataset: &Dataset, rows: &[usize]) -> Dataset {
    Dataset {
        feature_names: dataset.feature_names.clone(),
        rows: rows.iter().map(|&i| dataset.rows[i].clone()).collect(),
        labels: rows.iter().map(|&i| dataset.labels[i]).collect(),
    }
}

fn main_class_accuracy(forest: &Forest, dataset: &Dataset, rows: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for &i in rows {
        let (pred, _) = forest.predict(&dataset.rows[i])?;
        if pred.main_class()? == dataset.labels[i].main_class()? {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// K-fold cross-validated grid search on mean main-class validation
/// accuracy. Ties resolve to the earlier grid entry; the fold partition is
/// deterministic per seed and shared by every candidate.
pub fn kfold_grid_search(
    dataset: &Dataset,
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(KrfError::EmptyGrid);
    }
    let folds = kfold_partition(dataset.len(), k, seed)?;
    let mean_scores: Vec<f64> = grid
        .par_iter()
        .map(|hp| -> Result<f64> {
            let mut total = 0.0;
            for fold in &folds {
                let train_rows: Vec<usize> =
                    (0..dataset.len()).filter(|i| !fold.contains(i)).collect();
                let forest = fit_forest(&subset(dataset, &train_rows), hp)?;
                total += main_class_accuracy(&forest, dataset, fold)?;
            }
            Ok(total / folds.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best_index = 0;
    for (i, &score) in mean_scores.iter().enumerate() {
        if score > mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(GridSearchOutcome {
        best: grid[best_index],
        best_index,
        mean_scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Normalized importance per feature, summing to one.
    pub scores: Vec<f64>,
    /// True when every raw importance was non-positive and the uniform
    /// fallback was returned.
    pub uniform_fallback: bool,
}

/// Permutation importance: the drop in main-class accuracy when one feature
/// column is shuffled, averaged over 10 seeded permutations per feature,
/// clamped at zero and normalized to sum one.
pub fn permutation_importance(
    forest: &Forest,
    dataset: &Dataset,
    seed: u64,
) -> Result<ImportanceReport> {
    const REPEATS: usize = 10;
    let n = dataset.len();
    let all_rows: Vec<usize> = (0..n).collect();
    let baseline = main_class_accuracy(forest, dataset, &all_rows)?;
    let n_features = dataset.n_features();
    let mut raw = vec![0.0; n_features];
    for (feature, slot) in raw.iter_mut().enumerate() {
        let mut drop_sum = 0.0;
        for repeat in 0..REPEATS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + (feature * REPEATS + repeat) as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut permuted = dataset.clone();
            for (row, &src) in order.iter().enumerate() {
                permuted.rows[row][feature] = dataset.rows[src][feature];
            }
            let mut correct = 0usize;
            for i in 0..n {
                let (pred, _) = forest.predict(&permuted.rows[i])?;
                if pred.main_class()? == permuted.labels[i].main_class()? {
                    correct += 1;
                }
            }
            drop_sum += baseline - correct as f64 / n as f64;
        }
        *slot = (drop_sum / REPEATS as f64).max(0.0);
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(ImportanceReport {
            scores: vec![1.0 / n_features as f64; n_features],
            uniform_fallback: true,
        });
    }
    Ok(ImportanceReport {
        scores: raw.iter().map(|v| v / total).collect(),
        uniform_fallback: false,
    })
}
