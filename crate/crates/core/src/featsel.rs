//! Univariate ANOVA F selection and recursive feature elimination over a
//! linear SVM.

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::model::Classifier;
use crate::modelselect::{mean, stratified_kfold, FoldPlan};
use crate::svm::LinearOvr;

/// Per-feature F statistics. A feature whose classes have zero spread but
/// distinct means scores `f64::INFINITY`, which ranks above every finite score.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScores {
    pub f: Vec<f64>,
    pub df_between: usize,
    pub df_within: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    Kbest,
    Rfecv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub kept: Vec<bool>,
    pub kept_count: usize,
    pub provenance: MaskProvenance,
}

impl SelectionMask {
    fn from_indices(n: usize, keep: &[usize], provenance: MaskProvenance) -> Self {
        let mut kept = vec![false; n];
        for &j in keep {
            kept[j] = true;
        }
        SelectionMask {
            kept,
            kept_count: keep.len(),
            provenance,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&j| self.kept[j]).collect()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
        if x.ncols() != self.kept.len() {
            return Err(Error::shape(format!("{} columns", self.kept.len()), x.ncols()));
        }
        Ok(x.select(Axis(1), &self.indices()))
    }
}

pub fn anova_f_scores(x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<FeatureScores> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} labels", x.nrows()), y.len()));
    }
    let counts = crate::dataio::class_counts(y, n_classes);
    let present: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
    let c = present.len();
    if c < 2 {
        return Err(Error::InvalidArgument("F statistic needs at least two classes".into()));
    }
    let n = y.len();
    if n <= c {
        return Err(Error::Degenerate(format!("{n} rows leave no within-class degrees of freedom for {c} classes")));
    }
    let (df_between, df_within) = (c - 1, n - c);
    let f = x
        .axis_iter(Axis(1))
        .map(|col| {
            let grand = col.sum() / n as f64;
            let mut sums = vec![0.0; n_classes];
            for (&v, &l) in col.iter().zip(y) {
                sums[l] += v;
            }
            let means: Vec<f64> = (0..n_classes)
                .map(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 })
                .collect();
            let ssb: f64 = present.iter().map(|&k| counts[k] as f64 * (means[k] - grand).powi(2)).sum();
            let ssw: f64 = col.iter().zip(y).map(|(&v, &l)| (v - means[l]).powi(2)).sum();
            if ssb == 0.0 {
                0.0
            } else if ssw == 0.0 {
                f64::INFINITY
            } else {
                (ssb / df_between as f64) / (ssw / df_within as f64)
            }
        })
        .collect();
    Ok(FeatureScores {
        f,
        df_between,
        df_within,
    })
}

/// Columns ordered best-first: descending score, lower index on ties.
pub fn rank_features(s: &FeatureScores) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.f.len()).collect();
    order.sort_by(|&a, &b| s.f[b].total_cmp(&s.f[a]).then(a.cmp(&b)));
    order
}

pub fn select_top_k(s: &FeatureScores, k: usize) -> Result<SelectionMask> {
    if k == 0 || k > s.f.len() {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", s.f.len())));
    }
    Ok(SelectionMask::from_indices(s.f.len(), &rank_features(s)[..k], MaskProvenance::Kbest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KTuning {
    pub k: usize,
    /// Mean CV accuracy for k = 1, 2, ...
    pub mean_accuracy: Vec<f64>,
}

/// Default regularization of the linear SVM used for feature scoring.
pub const SELECTION_SVM_C: f64 = 1.0;

fn fold_xy(x: ArrayView2<f64>, y: &[usize], rows: &[usize]) -> (ndarray::Array2<f64>, Vec<usize>) {
    (x.select(Axis(0), rows), rows.iter().map(|&i| y[i]).collect())
}

fn best_index_smallest_on_ties(means: &[f64]) -> usize {
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    best
}

/// Chooses k for top-k selection by stratified CV accuracy of the linear
/// SVM, with F scores refit on every fold's training rows.
pub fn tune_k_by_cv(x: ArrayView2<f64>, y: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<KTuning> {
    let d = x.ncols();
    if d == 0 {
        return Err(Error::InvalidArgument("no features to select from".into()));
    }
    let plan = stratified_kfold(y, n_classes, folds, seed)?;
    let per_fold: Vec<Vec<f64>> = plan
        .folds
        .par_iter()
        .map(|fold| {
            let (xt, yt) = fold_xy(x, y, &fold.train);
            let (xv, yv) = fold_xy(x, y, &fold.validation);
            let order = rank_features(&anova_f_scores(xt.view(), &yt, n_classes)?);
            (1..=d)
                .map(|k| {
                    let cols = &order[..k];
                    let model = LinearOvr::fit(xt.select(Axis(1), cols).view(), &yt, n_classes, SELECTION_SVM_C)?;
                    Ok(accuracy(&yv, &model.predict(xv.select(Axis(1), cols).view())?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mean_accuracy: Vec<f64> = (0..d)
        .map(|k| mean(&per_fold.iter().map(|f| f[k]).collect::<Vec<_>>()))
        .collect();
    Ok(KTuning {
        k: best_index_smallest_on_ties(&mean_accuracy) + 1,
        mean_accuracy,
    })
}

/// Recursive elimination on one matrix. Returns the surviving original
/// column indices after each round, starting with all columns and ending at
/// `keep`; ties in importance drop the lower column index first.
pub fn rfe_path(x: ArrayView2<f64>, y: &[usize], n_classes: usize, keep: usize, step: usize) -> Result<Vec<Vec<usize>>> {
    if step == 0 || keep == 0 || keep > x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "elimination to {keep} of {} features with step {step}",
            x.ncols()
        )));
    }
    let mut current: Vec<usize> = (0..x.ncols()).collect();
    let mut path = vec![current.clone()];
    while current.len() > keep {
        let model = LinearOvr::fit(x.select(Axis(1), &current).view(), y, n_classes, SELECTION_SVM_C)?;
        let importance = model.feature_importance();
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
        let n_drop = step.min(current.len() - keep);
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        drop.sort_unstable();
        current = current
            .iter()
            .enumerate()
            .filter(|(pos, _)| drop.binary_search(pos).is_err())
            .map(|(_, &c)| c)
            .collect();
        path.push(current.clone());
    }
    Ok(path)
}

pub fn rfe_eliminate(x: ArrayView2<f64>, y: &[usize], n_classes: usize, keep: usize, step: usize) -> Result<SelectionMask> {
    let path = rfe_path(x, y, n_classes, keep, step)?;
    Ok(SelectionMask::from_indices(x.ncols(), path.last().unwrap(), MaskProvenance::Rfecv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeCvResult {
    pub mask: SelectionMask,
    /// (surviving feature count, mean CV accuracy), largest count first.
    pub scores: Vec<(usize, f64)>,
}

fn eval_path(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    step: usize,
    plan: &FoldPlan,
) -> Result<Vec<Vec<(usize, f64)>>> {
    plan.folds
        .par_iter()
        .map(|fold| {
            let (xt, yt) = fold_xy(x, y, &fold.train);
            let (xv, yv) = fold_xy(x, y, &fold.validation);
            let path = rfe_path(xt.view(), &yt, n_classes, 1, step)?;
            path.iter()
                .map(|cols| {
                    let model = LinearOvr::fit(xt.select(Axis(1), cols).view(), &yt, n_classes, SELECTION_SVM_C)?;
                    let acc = accuracy(&yv, &model.predict(xv.select(Axis(1), cols).view())?);
                    Ok((cols.len(), acc))
                })
                .collect()
        })
        .collect()
}

/// Recursive feature elimination with stratified CV over the surviving
/// feature count; the smallest count wins ties.
pub fn rfe_cv(x: ArrayView2<f64>, y: &[usize], n_classes: usize, folds: usize, step: usize, seed: u64) -> Result<RfeCvResult> {
    if x.ncols() == 0 || step == 0 {
        return Err(Error::InvalidArgument("RFE needs at least one feature and a positive step".into()));
    }
    let plan = stratified_kfold(y, n_classes, folds, seed)?;
    let per_fold = eval_path(x, y, n_classes, step, &plan)?;
    let sizes: Vec<usize> = per_fold[0].iter().map(|s| s.0).collect();
    let scores: Vec<(usize, f64)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| (size, mean(&per_fold.iter().map(|f| f[i].1).collect::<Vec<_>>())))
        .collect();
    // smallest count on ties: scan from the end of the path
    let mut best = scores.len() - 1;
    for i in (0..scores.len()).rev() {
        if scores[i].1 > scores[best].1 {
            best = i;
        }
    }
    let mask = rfe_eliminate(x, y, n_classes, scores[best].0, step)?;
    Ok(RfeCvResult { mask, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn f_statistic_examples() {
        let x = array![[1.0], [2.0], [3.0], [2.0], [3.0], [4.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let s = anova_f_scores(x.view(), &y, 2).unwrap();
        assert!((s.f[0] - 1.5).abs() < 1e-12);
        assert_eq!((s.df_between, s.df_within), (1, 4));

        let x = array![[1.0], [2.0], [3.0], [3.0], [2.0], [1.0]];
        assert_eq!(anova_f_scores(x.view(), &y, 2).unwrap().f[0], 0.0);

        let x = array![[1.0], [1.0], [3.0], [3.0]];
        assert_eq!(anova_f_scores(x.view(), &[0, 0, 1, 1], 2).unwrap().f[0], f64::INFINITY);
    }

    #[test]
    fn f_statistic_errors() {
        let x = array![[1.0], [2.0]];
        assert!(anova_f_scores(x.view(), &[0, 0], 2).is_err());
        assert!(matches!(anova_f_scores(x.view(), &[0, 1], 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn top_k_selection_and_ties() {
        let s = |f: Vec<f64>| FeatureScores { f, df_between: 1, df_within: 4 };
        assert_eq!(select_top_k(&s(vec![5.0, 1.0, 3.0]), 2).unwrap().indices(), vec![0, 2]);
        assert_eq!(select_top_k(&s(vec![5.0, 1.0, 3.0]), 3).unwrap().kept_count, 3);
        assert_eq!(select_top_k(&s(vec![2.0, 2.0, 1.0]), 1).unwrap().indices(), vec![0]);
        assert_eq!(
            select_top_k(&s(vec![1.0, f64::INFINITY, f64::INFINITY]), 1).unwrap().indices(),
            vec![1]
        );
        assert!(select_top_k(&s(vec![1.0]), 0).is_err());
        assert!(select_top_k(&s(vec![1.0]), 2).is_err());
    }

    fn signal_plus_noise(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let n = 60;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 4), |(i, j)| {
            if j == 2 {
                y[i] as f64 + rng.gen_range(-0.2..0.2)
            } else {
                rng.gen_range(0.0..1.0)
            }
        });
        (x, y)
    }

    #[test]
    fn tune_k_finds_single_separating_feature() {
        let (x, y) = signal_plus_noise(5);
        let t = tune_k_by_cv(x.view(), &y, 2, 10, 42).unwrap();
        assert_eq!(t.k, 1);
        assert_eq!(t.mean_accuracy.len(), 4);
        // exhaustive sweep agrees: k=1 attains the maximum
        let max = t.mean_accuracy.iter().copied().fold(0.0, f64::max);
        assert_eq!(t.mean_accuracy[0], max);
    }

    #[test]
    fn tune_k_identical_copies_and_single_feature() {
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((20, 3), |(i, _)| y[i] as f64 * 2.0 + (i % 5) as f64 * 0.1);
        assert_eq!(tune_k_by_cv(x.view(), &y, 2, 5, 0).unwrap().k, 1);
        let x1 = x.select(Axis(1), &[0]);
        assert_eq!(tune_k_by_cv(x1.view(), &y, 2, 5, 0).unwrap().k, 1);
    }

    #[test]
    fn constant_columns_are_eliminated_first() {
        let mut rng = crate::seed::rng(3);
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((40, 5), |(i, j)| match j {
            1 | 3 => y[i] as f64 + rng.gen_range(-0.6..0.6),
            _ => 0.5,
        });
        let path = rfe_path(x.view(), &y, 2, 1, 1).unwrap();
        assert_eq!(path[3], vec![1, 3]);
    }

    #[test]
    fn step_of_d_minus_one_evaluates_two_sizes() {
        let (x, y) = signal_plus_noise(9);
        let r = rfe_cv(x.view(), &y, 2, 5, 3, 1).unwrap();
        assert_eq!(r.scores.iter().map(|s| s.0).collect::<Vec<_>>(), vec![4, 1]);
        assert!(r.mask.kept_count >= 1);
        assert_eq!(r, rfe_cv(x.view(), &y, 2, 5, 3, 1).unwrap());
    }

    proptest! {
        #[test]
        fn f_is_affine_invariant(vals in proptest::collection::vec(-10.0f64..10.0, 12), a in 0.1f64..20.0, b in -50.0f64..50.0) {
            let x = Array2::from_shape_vec((12, 1), vals).unwrap();
            let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let f1 = anova_f_scores(x.view(), &y, 3).unwrap().f[0];
            let f2 = anova_f_scores(x.mapv(|v| a * v + b).view(), &y, 3).unwrap().f[0];
            prop_assert!((f1 - f2).abs() <= 1e-9 * f1.abs().max(1.0));
        }

        #[test]
        fn top_k_masks_are_nested(scores in proptest::collection::vec(0.0f64..5.0, 1..10), k1 in 1usize..10, k2 in 1usize..10) {
            let d = scores.len();
            let (k1, k2) = (k1.min(d), k2.min(d));
            let (lo, hi) = (k1.min(k2), k1.max(k2));
            let s = FeatureScores { f: scores.iter().map(|v| v.round()).collect(), df_between: 1, df_within: 1 };
            let a = select_top_k(&s, lo).unwrap();
            let b = select_top_k(&s, hi).unwrap();
            prop_assert!(a.kept.iter().zip(&b.kept).all(|(&x, &y)| !x || y));
        }
    }
}
