//! Classification metrics: confusion matrix, per-class report, one-vs-rest
//! ROC and fold-level confidence intervals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_order: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_order: &[String]) -> Self {
        let m = class_order.len();
        ConfusionMatrix {
            class_order: class_order.to_vec(),
            counts: vec![vec![0; m]; m],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Elementwise sum; both matrices must share a class order.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_order != other.class_order {
            return Err(Error::invalid(
                "confusion matrices have different class orders",
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn confusion(
    true_labels: &[usize],
    predicted: &[usize],
    class_order: &[String],
) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let m = class_order.len();
    let mut cm = ConfusionMatrix::zeros(class_order);
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= m || p >= m {
            return Err(Error::invalid(format!(
                "label index {} is not one of {m} classes",
                t.max(p)
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Precision, recall and F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_order: Vec<String>,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores; an empty denominator yields 0 and the class still
/// counts toward the macro averages.
pub fn class_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let total = cm.total();
    if cm.n_classes() == 0 || total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let per_class: Vec<ClassScores> = (0..cm.n_classes())
        .map(|j| {
            let tp = cm.counts[j][j];
            let precision = ratio(tp, cm.col_sum(j));
            let recall = ratio(tp, cm.row_sum(j));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: cm.row_sum(j),
            }
        })
        .collect();
    let m = per_class.len() as f64;
    Ok(ClassReport {
        class_order: cm.class_order.clone(),
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / m,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / m,
        accuracy: ratio(cm.trace(), total),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Binary ROC curve. All samples sharing a score are consumed in one
/// threshold step, so ties produce a diagonal segment.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("ROC scores must be finite"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateCurve(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr0, tpr0) = *points.last().unwrap();
        let pt = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (pt.0 - fpr0) * (pt.1 + tpr0) / 2.0;
        points.push(pt);
    }
    Ok(RocCurve { points, auc })
}

/// ROC of one class against the rest, using that class's score column.
pub fn roc_one_vs_rest(
    true_labels: &[usize],
    scores: &Matrix,
    positive_class: usize,
) -> Result<RocCurve> {
    if positive_class >= scores.ncols() {
        return Err(Error::invalid(format!(
            "class {positive_class} has no score column"
        )));
    }
    if scores.nrows() != true_labels.len() {
        return Err(Error::invalid("score rows and labels differ in length"));
    }
    let column: Vec<f64> = scores.column(positive_class).iter().copied().collect();
    let positive: Vec<bool> = true_labels.iter().map(|&l| l == positive_class).collect();
    roc_curve(&column, &positive)
}

/// `mean ± half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCi {
    pub confidence: f64,
    /// Description of how the interval was computed.
    pub method: String,
    pub per_class: Vec<Interval>,
    /// Interval over the per-fold macro recall.
    pub overall: Interval,
}

fn z_value(confidence: f64) -> Result<f64> {
    match confidence {
        c if c == 0.90 => Ok(1.645),
        c if c == 0.95 => Ok(1.96),
        c if c == 0.99 => Ok(2.576),
        _ => Err(Error::invalid(format!(
            "unsupported confidence level {confidence} (use 0.90, 0.95 or 0.99)"
        ))),
    }
}

/// Normal-approximation interval `mean ± z · s / √k` with the sample
/// standard deviation `s`.
pub fn mean_interval(values: &[f64], confidence: f64) -> Result<Interval> {
    let k = values.len();
    if k < 2 {
        return Err(Error::invalid(
            "a confidence interval needs at least 2 values",
        ));
    }
    let z = z_value(confidence)?;
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    Ok(Interval {
        mean,
        half_width: z * var.sqrt() / (k as f64).sqrt(),
    })
}

/// Per-class and overall sensitivity intervals from per-fold recalls
/// (`per_fold_recalls[fold][class]`).
pub fn sensitivity_ci(per_fold_recalls: &[Vec<f64>], confidence: f64) -> Result<SensitivityCi> {
    if per_fold_recalls.len() < 2 {
        return Err(Error::invalid(
            "sensitivity intervals need at least 2 folds",
        ));
    }
    let m = per_fold_recalls[0].len();
    if m == 0 || per_fold_recalls.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("every fold needs one recall per class"));
    }
    let per_class = (0..m)
        .map(|c| {
            let column: Vec<f64> = per_fold_recalls.iter().map(|r| r[c]).collect();
            mean_interval(&column, confidence)
        })
        .collect::<Result<Vec<_>>>()?;
    let macro_per_fold: Vec<f64> = per_fold_recalls
        .iter()
        .map(|r| r.iter().sum::<f64>() / m as f64)
        .collect();
    Ok(SensitivityCi {
        confidence,
        method: format!(
            "normal approximation over folds: mean ± {} × sample_sd / sqrt(k)",
            z_value(confidence)?
        ),
        per_class,
        overall: mean_interval(&macro_per_fold, confidence)?,
    })
}
