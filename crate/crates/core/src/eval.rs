//! Cross-validation experiments: k-fold evaluation, hidden-size sweep and
//! feature-subset ablation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elm::{self, Activation, Standardizer, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureSubset, FEATURE_LEN};
use crate::linalg::Matrix;
use crate::metrics::{
    class_report, confusion, roc_one_vs_rest, sensitivity_ci, ClassReport, ConfusionMatrix,
    RocCurve, SensitivityCi,
};
use crate::preprocess::ClaheParams;

/// Assignment of every sample to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffles indices with a seeded generator and deals them round-robin.
/// Under stratification each class is shuffled and dealt separately, with
/// the dealing position carried over from one class to the next so overall
/// fold sizes also stay within one of each other.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![usize::MAX; labels.len()];
    let groups: Vec<Vec<usize>> = if stratified {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups.retain(|g| !g.is_empty());
        if let Some(small) = groups.iter().find(|g| g.len() < k) {
            return Err(Error::invalid(format!(
                "class {} has {} samples, fewer than {k} folds",
                labels[small[0]],
                small.len()
            )));
        }
        groups
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut position = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for idx in group {
            assignments[idx] = position % k;
            position += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        stratified,
    })
}

/// Model and feature settings for one cross-validation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub hidden: usize,
    pub activation: Activation,
    /// Base seed; fold `f` trains with `seed + f`.
    pub seed: u64,
    pub subset: FeatureSubset,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            hidden: 350,
            activation: Activation::RbfL2,
            seed: 0,
            subset: FeatureSubset::Combined,
        }
    }
}

/// Echo of every setting that influenced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: usize,
    pub stratified: bool,
    pub plan_seed: u64,
    pub hidden: usize,
    pub activation: Activation,
    pub seed: u64,
    pub subset: FeatureSubset,
    pub class_order: Vec<String>,
    pub layout_digest: Option<String>,
    pub clahe: Option<ClaheParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub report: ClassReport,
    /// One-vs-rest AUC per class; `None` where the test fold lacks positives
    /// or negatives for that class.
    pub auc: Vec<Option<f64>>,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: ConfigEcho,
    pub folds: Vec<FoldReport>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled: ClassReport,
    /// One-vs-rest ROC over the pooled out-of-fold scores, per class.
    pub pooled_roc: Vec<Option<RocCurve>>,
    pub sensitivity_ci: SensitivityCi,
}

impl CvReport {
    pub fn accuracy(&self) -> f64 {
        self.pooled.accuracy
    }

    /// Macro recall of each fold.
    pub fn fold_sensitivities(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.report.macro_recall).collect()
    }
}

fn subset_columns(features: &Matrix, subset: FeatureSubset) -> Result<Matrix> {
    if features.ncols() != FEATURE_LEN {
        return Err(Error::invalid(format!(
            "feature matrix must have {FEATURE_LEN} columns, got {}",
            features.ncols()
        )));
    }
    let range = subset.range();
    Ok(features.columns(range.start, range.len()).into_owned())
}

struct FoldOutcome {
    report: FoldReport,
    test_indices: Vec<usize>,
    scores: Matrix,
}

fn run_fold(
    x: &Matrix,
    labels: &[usize],
    class_order: &[String],
    plan: &FoldPlan,
    fold: usize,
    config: &CvConfig,
) -> Result<FoldOutcome> {
    let train_idx = plan.train_indices(fold);
    let test_idx = plan.test_indices(fold);
    if test_idx.is_empty() {
        return Err(Error::invalid("empty test fold"));
    }
    let x_train = x.select_rows(train_idx.iter());
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let x_test = x.select_rows(test_idx.iter());
    let y_test: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();

    let train_config = TrainConfig {
        hidden: config.hidden,
        activation: config.activation,
        seed: config.seed.wrapping_add(fold as u64),
    };
    let model = elm::train(&x_train, &y_train, class_order, &train_config)?;
    let (scores, predicted) = model.predict(&x_test)?;
    let cm = confusion(&y_test, &predicted, class_order)?;
    let report = class_report(&cm)?;
    let auc = (0..class_order.len())
        .map(|c| roc_one_vs_rest(&y_test, &scores, c).ok().map(|r| r.auc))
        .collect();
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            confusion: cm,
            report,
            auc,
            standardizer: model.standardizer,
        },
        test_indices: test_idx,
        scores,
    })
}

/// Trains on `k - 1` folds and scores the held-out fold, for every fold.
/// Folds run in parallel; results are assembled in fold order.
pub fn cross_validate(
    features: &Matrix,
    labels: &[usize],
    class_order: &[String],
    plan: &FoldPlan,
    config: &CvConfig,
) -> Result<CvReport> {
    if plan.len() != labels.len() || features.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "plan covers {} samples, features have {} rows, labels {}",
            plan.len(),
            features.nrows(),
            labels.len()
        )));
    }
    let x = subset_columns(features, config.subset)?;
    let outcomes: Vec<FoldOutcome> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            run_fold(&x, labels, class_order, plan, fold, config).map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let m = class_order.len();
    let mut pooled_confusion = ConfusionMatrix::zeros(class_order);
    let mut pooled_scores = Matrix::zeros(labels.len(), m);
    for o in &outcomes {
        pooled_confusion.add(&o.report.confusion)?;
        for (row, &idx) in o.test_indices.iter().enumerate() {
            pooled_scores.set_row(idx, &o.scores.row(row));
        }
    }
    let pooled = class_report(&pooled_confusion)?;
    let pooled_roc = (0..m)
        .map(|c| roc_one_vs_rest(labels, &pooled_scores, c).ok())
        .collect();
    let recalls: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| o.report.report.per_class.iter().map(|c| c.recall).collect())
        .collect();
    let sensitivity_ci = sensitivity_ci(&recalls, 0.95)?;

    Ok(CvReport {
        config: ConfigEcho {
            k: plan.k,
            stratified: plan.stratified,
            plan_seed: plan.seed,
            hidden: config.hidden,
            activation: config.activation,
            seed: config.seed,
            subset: config.subset,
            class_order: class_order.to_vec(),
            layout_digest: None,
            clahe: None,
        },
        folds: outcomes.into_iter().map(|o| o.report).collect(),
        pooled_confusion,
        pooled,
        pooled_roc,
        sensitivity_ci,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// One cross-validation per hidden-layer size, all sharing `plan` and `config.seed`.
pub fn sweep_hidden(
    features: &Matrix,
    labels: &[usize],
    class_order: &[String],
    plan: &FoldPlan,
    hidden_values: &[usize],
    config: &CvConfig,
) -> Result<Vec<SweepRow>> {
    if hidden_values.is_empty() || hidden_values.contains(&0) {
        return Err(Error::invalid(
            "hidden sizes must be a non-empty list of positive integers",
        ));
    }
    hidden_values
        .iter()
        .map(|&hidden| {
            let cfg = CvConfig { hidden, ..*config };
            let report = cross_validate(features, labels, class_order, plan, &cfg)?;
            Ok(SweepRow {
                hidden,
                accuracy: report.pooled.accuracy,
                macro_f1: report.pooled.macro_f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub subset: FeatureSubset,
    /// Macro recall of each fold.
    pub fold_sensitivities: Vec<f64>,
    pub median: f64,
    pub accuracy: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Cross-validates the frequency, texture and combined subsets.
pub fn ablate_subsets(
    features: &Matrix,
    labels: &[usize],
    class_order: &[String],
    plan: &FoldPlan,
    config: &CvConfig,
) -> Result<Vec<AblationEntry>> {
    FeatureSubset::ALL
        .iter()
        .map(|&subset| {
            let cfg = CvConfig { subset, ..*config };
            let report = cross_validate(features, labels, class_order, plan, &cfg)?;
            let fold_sensitivities = report.fold_sensitivities();
            Ok(AblationEntry {
                subset,
                median: median(&fold_sensitivities),
                fold_sensitivities,
                accuracy: report.pooled.accuracy,
            })
        })
        .collect()
}
