//! Voting and stacking combiners over fitted member pipelines.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, argmax_rows, softmax, Classifier, Recipe};
use crate::modelselect::{stratified_kfold, FoldPlan};
use crate::seed::derive_seed;
use crate::view::{FittedMember, MemberRecipe};

/// A tuned base model with the view it was tuned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberPipeline {
    pub name: String,
    pub config: String,
    pub recipe: MemberRecipe,
    pub fitted: FittedMember,
    pub member_weight: f64,
    pub cv_accuracy: f64,
}

/// Normalizes CV accuracies into member weights.
pub fn compute_member_weights(cv_accuracies: &[f64]) -> Result<Vec<f64>> {
    if cv_accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
    }
    let total: f64 = cv_accuracies.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("every member has zero CV accuracy".into()));
    }
    Ok(cv_accuracies.iter().map(|a| a / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingMode {
    Hard,
    Soft,
    WeightedHard,
    WeightedSoft,
}

impl VotingMode {
    pub const ALL: [VotingMode; 4] = [VotingMode::Hard, VotingMode::Soft, VotingMode::WeightedHard, VotingMode::WeightedSoft];

    pub fn id(self) -> &'static str {
        match self {
            VotingMode::Hard => "hard_voting",
            VotingMode::Soft => "soft_voting",
            VotingMode::WeightedHard => "weighted_hard_voting",
            VotingMode::WeightedSoft => "weighted_soft_voting",
        }
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, VotingMode::WeightedHard | VotingMode::WeightedSoft)
    }

    pub fn is_hard(self) -> bool {
        matches!(self, VotingMode::Hard | VotingMode::WeightedHard)
    }
}

/// Combines member outputs. Hard modes count each member's label (`labels`)
/// with its weight and report normalized vote shares; soft modes average the
/// probability tables. Ties go to the lowest class index.
pub fn combine_votes(mode: VotingMode, probs: &[Array2<f64>], labels: &[Vec<usize>], weights: &[f64]) -> Result<(Vec<usize>, Array2<f64>)> {
    let k = probs.len();
    if k == 0 || labels.len() != k || weights.len() != k {
        return Err(Error::InvalidArgument("voting needs matching member outputs and weights".into()));
    }
    let (n, c) = probs[0].dim();
    if probs.iter().any(|p| p.dim() != (n, c)) || labels.iter().any(|l| l.len() != n) {
        return Err(Error::shape(format!("{n}x{c} member outputs"), "mismatched member output"));
    }
    let w: Vec<f64> = if mode.is_weighted() { weights.to_vec() } else { vec![1.0 / k as f64; k] };
    let mut out = Array2::zeros((n, c));
    if mode.is_hard() {
        for (lab, &wk) in labels.iter().zip(&w) {
            for (i, &l) in lab.iter().enumerate() {
                out[[i, l]] += wk;
            }
        }
    } else {
        for (p, &wk) in probs.iter().zip(&w) {
            out.scaled_add(wk, p);
        }
    }
    let total: f64 = w.iter().sum();
    out /= total;
    Ok((argmax_rows(&out), out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub members: Vec<MemberPipeline>,
    pub mode: VotingMode,
    pub n_classes: usize,
}

impl VotingEnsemble {
    pub fn new(members: Vec<MemberPipeline>, mode: VotingMode) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidArgument("a voting ensemble needs at least two members".into()));
        }
        let n_classes = members[0].fitted.n_classes();
        Ok(VotingEnsemble { members, mode, n_classes })
    }
}

fn member_outputs(members: &[MemberPipeline], x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Vec<Vec<usize>>)> {
    let out: Vec<(Array2<f64>, Vec<usize>)> = members
        .iter()
        .map(|m| {
            let xt = m.fitted.view.transform(x)?;
            Ok((m.fitted.model.predict_proba(xt.view())?, m.fitted.model.predict(xt.view())?))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

pub fn predict_voting(e: &VotingEnsemble, x: ArrayView2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
    let (probs, labels) = member_outputs(&e.members, x)?;
    let weights: Vec<f64> = e.members.iter().map(|m| m.member_weight).collect();
    combine_votes(e.mode, &probs, &labels, &weights)
}

impl Classifier for VotingEnsemble {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        predict_voting(self, x).map(|(_, p)| p)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        predict_voting(self, x).map(|(l, _)| l)
    }
}

/// Multinomial logistic regression over meta-features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticMeta {
    /// C x D.
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting from the zero model.
    pub loss_history: Vec<f64>,
}

pub const META_L2: f64 = 1.0;
pub const META_MAX_ITER: usize = 500;
pub const META_TOL: f64 = 1e-6;

/// Summed cross-entropy plus (l2 / 2)|W|^2 and its gradients; the bias is
/// not penalized.
pub fn logistic_objective(w: &Array2<f64>, b: &[f64], m: ArrayView2<f64>, y: &[usize], l2: f64) -> (f64, Array2<f64>, Vec<f64>) {
    let c = w.nrows();
    let mut loss = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    let mut gw = w * l2;
    let mut gb = vec![0.0; c];
    let scores = m.dot(&w.t()) + &Array1::from(b.to_vec());
    for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
        let p = softmax(&row.to_vec());
        loss -= p[y[i]].max(f64::MIN_POSITIVE).ln();
        for k in 0..c {
            let r = p[k] - f64::from(k == y[i]);
            gb[k] += r;
            gw.row_mut(k).scaled_add(r, &m.row(i));
        }
    }
    (loss, gw, gb)
}

/// Gradient descent with Armijo backtracking from the zero model.
pub fn fit_logistic_meta(m: ArrayView2<f64>, y: &[usize], n_classes: usize, l2: f64, max_iter: usize, tol: f64) -> Result<LogisticMeta> {
    if m.nrows() != y.len() {
        return Err(Error::shape(format!("{} labels", m.nrows()), y.len()));
    }
    let mut w = Array2::zeros((n_classes, m.ncols()));
    let mut b = vec![0.0; n_classes];
    let (mut f, mut gw, mut gb) = logistic_objective(&w, &b, m, y, l2);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let gnorm2 = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>();
        if gnorm2.sqrt() <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        while step > 1e-20 {
            let w_new = &w - &(&gw * step);
            let b_new: Vec<f64> = b.iter().zip(&gb).map(|(bi, gi)| bi - step * gi).collect();
            let trial = logistic_objective(&w_new, &b_new, m, y, l2);
            if trial.0 <= f - 1e-4 * step * gnorm2 {
                accepted = Some((w_new, b_new, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, (f_new, gw_new, gb_new))) = accepted else {
            break;
        };
        w = w_new;
        b = b_new;
        f = f_new;
        gw = gw_new;
        gb = gb_new;
        history.push(f);
        step *= 2.0;
    }
    Ok(LogisticMeta {
        weights: w,
        bias: b,
        l2,
        iterations,
        converged,
        loss_history: history,
    })
}

impl LogisticMeta {
    pub fn predict_proba(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.weights.ncols() {
            return Err(Error::shape(format!("{} meta-features", self.weights.ncols()), m.ncols()));
        }
        let mut s = m.dot(&self.weights.t()) + &Array1::from(self.bias.clone());
        for mut row in s.axis_iter_mut(Axis(0)) {
            let p = softmax(&row.to_vec());
            row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackingEnsemble {
    pub members: Vec<MemberPipeline>,
    pub meta: LogisticMeta,
    pub oof_folds: usize,
    pub n_classes: usize,
}

/// Out-of-fold bookkeeping from a stacking fit.
#[derive(Clone, Debug, PartialEq)]
pub struct OofAudit {
    pub plan: FoldPlan,
    /// Fold whose models produced each training row's meta-features.
    pub fold_of_row: Vec<usize>,
    pub meta_matrix: Array2<f64>,
}

/// Builds out-of-fold member probabilities (members refit on each fold's
/// training rows with their fixed recipes) and fits the meta-learner on
/// them. `members` are already fit on all of `x` and are kept for inference.
pub fn fit_stacking(
    members: Vec<MemberPipeline>,
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    folds: usize,
    seed: u64,
) -> Result<(StackingEnsemble, OofAudit)> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("stacking needs at least one member".into()));
    }
    let plan = stratified_kfold(y, n_classes, folds, seed)?;
    let k = members.len();
    let tasks: Vec<(usize, usize)> = (0..plan.k).flat_map(|f| (0..k).map(move |j| (f, j))).collect();
    let blocks: Vec<Array2<f64>> = tasks
        .par_iter()
        .map(|&(f, j)| {
            let fold = &plan.folds[f];
            let xtr = x.select(Axis(0), &fold.train);
            let ytr: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
            let fitted = members[j].recipe.fit(xtr.view(), &ytr, n_classes, derive_seed(seed, &[f as u64, j as u64]))?;
            fitted.predict_proba(x.select(Axis(0), &fold.validation).view())
        })
        .collect::<Result<_>>()?;
    let mut meta_matrix = Array2::from_elem((x.nrows(), k * n_classes), f64::NAN);
    let mut fold_of_row = vec![usize::MAX; x.nrows()];
    for (&(f, j), block) in tasks.iter().zip(&blocks) {
        for (r, &i) in plan.folds[f].validation.iter().enumerate() {
            meta_matrix
                .slice_mut(ndarray::s![i, j * n_classes..(j + 1) * n_classes])
                .assign(&block.row(r));
            fold_of_row[i] = f;
        }
    }
    if fold_of_row.contains(&usize::MAX) {
        return Err(Error::Degenerate("out-of-fold plan left rows uncovered".into()));
    }
    let meta = fit_logistic_meta(meta_matrix.view(), y, n_classes, META_L2, META_MAX_ITER, META_TOL)?;
    Ok((
        StackingEnsemble {
            members,
            meta,
            oof_folds: folds,
            n_classes,
        },
        OofAudit {
            plan,
            fold_of_row,
            meta_matrix,
        },
    ))
}

pub fn predict_stacking(e: &StackingEnsemble, x: ArrayView2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
    let (probs, _) = member_outputs(&e.members, x)?;
    let views: Vec<ArrayView2<f64>> = probs.iter().map(|p| p.view()).collect();
    let m = concatenate(Axis(1), &views).map_err(|e| Error::shape("stackable member outputs", e.to_string()))?;
    let p = e.meta.predict_proba(m.view())?;
    Ok((p.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect(), p))
}

impl Classifier for StackingEnsemble {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        predict_stacking(self, x).map(|(_, p)| p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn member_weight_examples() {
        let w = compute_member_weights(&[0.8, 0.9]).unwrap();
        assert!((w[0] - 8.0 / 17.0).abs() < 1e-15 && (w[1] - 9.0 / 17.0).abs() < 1e-15);
        assert_eq!(compute_member_weights(&[0.5, 0.5, 0.5]).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(compute_member_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn voting_examples() {
        let one = |c: usize| {
            let mut p = Array2::zeros((1, 2));
            p[[0, c]] = 1.0;
            p
        };
        let probs = vec![one(0), one(0), one(1)];
        let labels = vec![vec![0], vec![0], vec![1]];
        assert_eq!(combine_votes(VotingMode::Hard, &probs, &labels, &[1.0; 3]).unwrap().0, vec![0]);
        let (l, p) = combine_votes(VotingMode::WeightedHard, &probs, &labels, &[0.3, 0.3, 0.5]).unwrap();
        assert_eq!(l, vec![0]);
        assert!((p[[0, 0]] - 0.6 / 1.1).abs() < 1e-12);

        let soft = vec![array![[0.6, 0.4]], array![[0.2, 0.8]]];
        let (l, p) = combine_votes(VotingMode::Soft, &soft, &[vec![0], vec![1]], &[0.9, 0.1]).unwrap();
        assert_eq!(l, vec![1]);
        assert!((p[[0, 0]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_meta_is_uniform() {
        let meta = LogisticMeta {
            weights: Array2::zeros((3, 6)),
            bias: vec![0.0; 3],
            l2: 1.0,
            iterations: 0,
            converged: false,
            loss_history: vec![],
        };
        let p = meta.predict_proba(Array2::from_elem((2, 6), 0.3).view()).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let m = array![[0.1, 0.9, 0.3, 0.2], [0.5, 0.5, 0.7, 0.1], [0.9, 0.1, 0.2, 0.8], [0.3, 0.3, 0.3, 0.6], [0.0, 1.0, 0.5, 0.5], [0.2, 0.4, 0.9, 0.9]];
        let y = [0, 1, 2, 0, 1, 2];
        let w = Array2::from_shape_fn((3, 4), |(i, j)| 0.1 * i as f64 - 0.2 * j as f64 + 0.05);
        let b = vec![0.1, -0.3, 0.2];
        let (_, gw, gb) = logistic_objective(&w, &b, m.view(), &y, 1.0);
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[[i, j]] += eps;
                dn[[i, j]] -= eps;
                let fd = (logistic_objective(&up, &b, m.view(), &y, 1.0).0 - logistic_objective(&dn, &b, m.view(), &y, 1.0).0) / (2.0 * eps);
                assert!((fd - gw[[i, j]]).abs() < 1e-5);
            }
            let (mut up, mut dn) = (b.clone(), b.clone());
            up[i] += eps;
            dn[i] -= eps;
            let fd = (logistic_objective(&w, &up, m.view(), &y, 1.0).0 - logistic_objective(&w, &dn, m.view(), &y, 1.0).0) / (2.0 * eps);
            assert!((fd - gb[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn meta_fit_decreases_loss_and_learns_labels() {
        let m = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.2, 0.8]];
        let y = [0, 0, 1, 1];
        let meta = fit_logistic_meta(m.view(), &y, 2, 1.0, 500, 1e-6).unwrap();
        assert!(meta.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(argmax_rows(&meta.predict_proba(m.view()).unwrap()), y);
    }
}
