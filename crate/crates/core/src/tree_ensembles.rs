//! Tree-based classifiers: random forest, bagging, multiclass AdaBoost
//! (SAMME), multinomial gradient boosting and second-order regularized
//! boosting.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{self, grow_tree, Criterion, DecisionTree, FeatureSubsample, Limits, TreeParams};
use crate::error::{Error, Result};
use crate::model::{argmax, softmax, Classifier};
use crate::seed::{derive_seed, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    RandomForest,
    Bagging,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn random_forest(n_trees: usize) -> Self {
        ForestParams {
            n_trees,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap: true,
        }
    }

    pub fn bagging(n_trees: usize) -> Self {
        ForestParams {
            feature_subsample: FeatureSubsample::All,
            ..Self::random_forest(n_trees)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub kind: ForestKind,
    pub n_classes: usize,
}

fn fit_forest(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    p: &ForestParams,
    kind: ForestKind,
    seed: u64,
) -> Result<ForestModel> {
    if p.n_trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let n = x.nrows();
    let tree_seeds: Vec<u64> = (0..p.n_trees).map(|t| derive_seed(seed, &[t as u64])).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            // bootstrap draws become integer sample weights
            let weights = if p.bootstrap {
                let mut r = rng(s);
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[r.gen_range(0..n)] += 1.0;
                }
                w
            } else {
                vec![1.0; n]
            };
            let tp = TreeParams {
                max_depth: p.max_depth,
                min_samples_split: p.min_samples_split,
                min_samples_leaf: p.min_samples_leaf,
                feature_subsample: p.feature_subsample,
                seed: derive_seed(s, &[1]),
            };
            cart::fit_tree(x, y, &weights, n_classes, &tp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        tree_seeds,
        kind,
        n_classes,
    })
}

pub fn fit_random_forest(x: ArrayView2<f64>, y: &[usize], n_classes: usize, p: &ForestParams, seed: u64) -> Result<ForestModel> {
    fit_forest(x, y, n_classes, p, ForestKind::RandomForest, seed)
}

/// Bagging considers every feature at every node regardless of `p.feature_subsample`.
pub fn fit_bagging(x: ArrayView2<f64>, y: &[usize], n_classes: usize, p: &ForestParams, seed: u64) -> Result<ForestModel> {
    let p = ForestParams {
        feature_subsample: FeatureSubsample::All,
        ..*p
    };
    fit_forest(x, y, n_classes, &p, ForestKind::Bagging, seed)
}

impl Classifier for ForestModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut p = Array2::zeros((x.nrows(), self.n_classes));
        for t in &self.trees {
            p += &t.predict_proba(x)?;
        }
        p /= self.trees.len() as f64;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    pub n_stages: usize,
    pub max_depth: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams {
            n_stages: 100,
            max_depth: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostStage {
    pub tree: DecisionTree,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stages: Vec<AdaBoostStage>,
    pub n_classes: usize,
}

/// Per-stage bookkeeping of a boosting run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaBoostTrace {
    /// Weighted error of every fitted stage, including a discarded last one.
    pub stage_errors: Vec<f64>,
    /// Sum of sample weights after each kept stage's update.
    pub weight_sums: Vec<f64>,
}

/// Floor on the weighted error used for a perfect stage.
pub const ADABOOST_ERR_FLOOR: f64 = 1e-10;

/// SAMME stage weight ln((1 - err) / err) + ln(C - 1).
pub fn samme_alpha(err: f64, n_classes: usize) -> f64 {
    let err = err.max(ADABOOST_ERR_FLOOR);
    ((1.0 - err) / err).ln() + ((n_classes - 1) as f64).ln()
}

pub fn fit_adaboost(x: ArrayView2<f64>, y: &[usize], n_classes: usize, p: &AdaBoostParams, seed: u64) -> Result<AdaBoostModel> {
    fit_adaboost_traced(x, y, n_classes, p, seed).map(|(m, _)| m)
}

pub fn fit_adaboost_traced(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    p: &AdaBoostParams,
    seed: u64,
) -> Result<(AdaBoostModel, AdaBoostTrace)> {
    if p.n_stages == 0 || n_classes < 2 {
        return Err(Error::InvalidArgument("AdaBoost needs at least one stage and two classes".into()));
    }
    let n = x.nrows();
    let mut w = vec![1.0 / n as f64; n];
    let mut stages = Vec::new();
    let mut trace = AdaBoostTrace::default();
    let chance = 1.0 - 1.0 / n_classes as f64;
    for m in 0..p.n_stages {
        let tp = TreeParams {
            max_depth: Some(p.max_depth),
            seed: derive_seed(seed, &[m as u64]),
            ..TreeParams::default()
        };
        let tree = cart::fit_tree(x, y, &w, n_classes, &tp)?;
        let pred = tree.predict(x)?;
        let total: f64 = w.iter().sum();
        let err = pred.iter().zip(y).zip(&w).filter(|((a, b), _)| a != b).map(|(_, w)| w).sum::<f64>() / total;
        trace.stage_errors.push(err);
        if err >= chance {
            if stages.is_empty() {
                // keep the lone weak learner so the model can still predict
                log::warn!("AdaBoost first stage error {err:.4} is no better than chance");
                stages.push(AdaBoostStage { tree, alpha: 1.0 });
            }
            break;
        }
        let alpha = samme_alpha(err, n_classes);
        stages.push(AdaBoostStage { tree, alpha });
        if err <= 0.0 {
            break;
        }
        let boost = alpha.exp();
        for (wi, (a, b)) in w.iter_mut().zip(pred.iter().zip(y)) {
            if a != b {
                *wi *= boost;
            }
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|wi| *wi /= z);
        trace.weight_sums.push(w.iter().sum());
    }
    Ok((AdaBoostModel { stages, n_classes }, trace))
}

impl Classifier for AdaBoostModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Normalized stage-vote mass per class.
    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut votes = Array2::zeros((x.nrows(), self.n_classes));
        for stage in &self.stages {
            for (i, label) in stage.tree.predict(x)?.into_iter().enumerate() {
                votes[[i, label]] += stage.alpha;
            }
        }
        let total: f64 = self.stages.iter().map(|s| s.alpha).sum();
        votes /= total;
        Ok(votes)
    }
}

/// Per-row softmax cross-entropy with its gradient and diagonal Hessian with
/// respect to the raw class scores.
pub fn softmax_loss_grad_hess(scores: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let p = softmax(scores);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let grad = p.iter().enumerate().map(|(k, &pk)| pk - f64::from(k == label)).collect();
    let hess = p.iter().map(|&pk| pk * (1.0 - pk)).collect();
    (loss, grad, hess)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

/// Additive multiclass model: softmax of `init` plus the summed leaf values
/// of one regression tree per class per round (leaves already scaled by the
/// learning rate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradBoostModel {
    pub init: Vec<f64>,
    pub rounds: Vec<Vec<DecisionTree>>,
    pub learning_rate: f64,
    pub n_classes: usize,
    /// Present for the second-order regularized variant.
    pub regularization: Option<Regularization>,
}

/// Variance-reduction splits on residuals with Newton multiclass leaves.
struct ResidualVariance<'a> {
    residual: &'a [f64],
    leaf_scale: f64,
}

#[derive(Clone)]
struct ResidualStats {
    sum: f64,
    curvature: f64,
    count: usize,
}

impl Criterion for ResidualVariance<'_> {
    type Stats = ResidualStats;

    fn zero(&self) -> ResidualStats {
        ResidualStats {
            sum: 0.0,
            curvature: 0.0,
            count: 0,
        }
    }

    fn add(&self, s: &mut ResidualStats, row: usize) {
        let r = self.residual[row];
        s.sum += r;
        s.curvature += r.abs() * (1.0 - r.abs());
        s.count += 1;
    }

    fn difference(&self, whole: &ResidualStats, part: &ResidualStats) -> ResidualStats {
        ResidualStats {
            sum: whole.sum - part.sum,
            curvature: whole.curvature - part.curvature,
            count: whole.count - part.count,
        }
    }

    fn is_terminal(&self, s: &ResidualStats) -> bool {
        s.count < 2
    }

    fn gain(&self, parent: &ResidualStats, l: &ResidualStats, r: &ResidualStats) -> Option<f64> {
        Some(l.sum * l.sum / l.count as f64 + r.sum * r.sum / r.count as f64 - parent.sum * parent.sum / parent.count as f64)
    }

    fn leaf(&self, s: &ResidualStats) -> Vec<f64> {
        let v = if s.curvature > 1e-150 { s.sum / s.curvature } else { 0.0 };
        vec![self.leaf_scale * v]
    }
}

/// Gradient/Hessian gain with L2 leaf penalty and split penalty.
struct SecondOrder<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    reg: Regularization,
    learning_rate: f64,
}

#[derive(Clone)]
struct GradStats {
    g: f64,
    h: f64,
    count: usize,
}

/// Structure score gain of splitting (G, H) into (G_L, H_L) and (G_R, H_R).
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - (gl + gr).powi(2) / (hl + hr + lambda)) - gamma
}

/// Optimal leaf weight -G / (H + lambda).
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        -g / (h + lambda)
    } else {
        0.0
    }
}

impl Criterion for SecondOrder<'_> {
    type Stats = GradStats;

    fn zero(&self) -> GradStats {
        GradStats { g: 0.0, h: 0.0, count: 0 }
    }

    fn add(&self, s: &mut GradStats, row: usize) {
        s.g += self.grad[row];
        s.h += self.hess[row];
        s.count += 1;
    }

    fn difference(&self, whole: &GradStats, part: &GradStats) -> GradStats {
        GradStats {
            g: whole.g - part.g,
            h: (whole.h - part.h).max(0.0),
            count: whole.count - part.count,
        }
    }

    fn is_terminal(&self, s: &GradStats) -> bool {
        s.count < 2
    }

    fn gain(&self, _parent: &GradStats, l: &GradStats, r: &GradStats) -> Option<f64> {
        if l.h < self.reg.min_child_weight || r.h < self.reg.min_child_weight {
            return None;
        }
        Some(split_gain(l.g, l.h, r.g, r.h, self.reg.lambda, self.reg.gamma))
    }

    fn leaf(&self, s: &GradStats) -> Vec<f64> {
        vec![self.learning_rate * leaf_weight(s.g, s.h, self.reg.lambda)]
    }
}

fn log_priors(y: &[usize], n_classes: usize) -> Vec<f64> {
    let counts = crate::dataio::class_counts(y, n_classes);
    counts
        .iter()
        .map(|&c| (c as f64 / y.len() as f64).max(1e-15).ln())
        .collect()
}

fn check_boost(p: &BoostParams, n_classes: usize) -> Result<()> {
    if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("learning rate {} outside (0, 1]", p.learning_rate)));
    }
    if n_classes < 2 {
        return Err(Error::InvalidArgument("boosting needs at least two classes".into()));
    }
    Ok(())
}

fn boost(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    p: &BoostParams,
    reg: Option<Regularization>,
) -> Result<GradBoostModel> {
    check_boost(p, n_classes)?;
    if let Some(r) = reg {
        if r.lambda < 0.0 || r.gamma < 0.0 || r.min_child_weight < 0.0 {
            return Err(Error::InvalidArgument("lambda, gamma and min_child_weight must be non-negative".into()));
        }
    }
    let n = x.nrows();
    let init = log_priors(y, n_classes);
    let mut raw = Array2::from_shape_fn((n, n_classes), |(_, k)| init[k]);
    let rows: Vec<usize> = (0..n).collect();
    let limits = Limits {
        max_depth: Some(p.max_depth),
        min_samples_split: 2,
        min_samples_leaf: p.min_samples_leaf.max(1),
        max_features: x.ncols(),
    };
    let mut rounds = Vec::with_capacity(p.n_rounds);
    for _ in 0..p.n_rounds {
        let probs: Vec<Vec<f64>> = raw.axis_iter(Axis(0)).map(|r| softmax(&r.to_vec())).collect();
        let mut trees = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            let nodes = match reg {
                None => {
                    let residual: Vec<f64> = (0..n).map(|i| f64::from(y[i] == k) - probs[i][k]).collect();
                    let crit = ResidualVariance {
                        residual: &residual,
                        leaf_scale: p.learning_rate * (n_classes - 1) as f64 / n_classes as f64,
                    };
                    grow_tree(x, &rows, &crit, &limits, None)
                }
                Some(r) => {
                    let grad: Vec<f64> = (0..n).map(|i| probs[i][k] - f64::from(y[i] == k)).collect();
                    let hess: Vec<f64> = (0..n).map(|i| (probs[i][k] * (1.0 - probs[i][k])).max(1e-16)).collect();
                    let crit = SecondOrder {
                        grad: &grad,
                        hess: &hess,
                        reg: r,
                        learning_rate: p.learning_rate,
                    };
                    grow_tree(x, &rows, &crit, &limits, None)
                }
            };
            trees.push(DecisionTree {
                nodes,
                n_features: x.ncols(),
                n_classes: 1,
            });
        }
        for (k, tree) in trees.iter().enumerate() {
            for (i, row) in x.axis_iter(Axis(0)).enumerate() {
                raw[[i, k]] += tree.leaf_value(row)[0];
            }
        }
        rounds.push(trees);
    }
    Ok(GradBoostModel {
        init,
        rounds,
        learning_rate: p.learning_rate,
        n_classes,
        regularization: reg,
    })
}

pub fn fit_gradient_boosting(x: ArrayView2<f64>, y: &[usize], n_classes: usize, p: &BoostParams) -> Result<GradBoostModel> {
    boost(x, y, n_classes, p, None)
}

pub fn fit_regularized_boosting(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    p: &BoostParams,
    reg: &Regularization,
) -> Result<GradBoostModel> {
    boost(x, y, n_classes, p, Some(*reg))
}

impl GradBoostModel {
    /// Raw class scores after the first `rounds` rounds.
    pub fn raw_scores(&self, x: ArrayView2<f64>, rounds: usize) -> Result<Array2<f64>> {
        let mut raw = Array2::from_shape_fn((x.nrows(), self.n_classes), |(_, k)| self.init[k]);
        for trees in self.rounds.iter().take(rounds) {
            for (k, tree) in trees.iter().enumerate() {
                let v = tree.predict_values(x)?;
                raw.column_mut(k).iter_mut().zip(v).for_each(|(r, v)| *r += v);
            }
        }
        Ok(raw)
    }

    /// Mean multinomial log-loss after each number of rounds 0..=len.
    pub fn training_loss_curve(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<f64>> {
        let mut raw = self.raw_scores(x, 0)?;
        let loss = |raw: &Array2<f64>| {
            raw.axis_iter(Axis(0))
                .zip(y)
                .map(|(r, &l)| softmax_loss_grad_hess(&r.to_vec(), l).0)
                .sum::<f64>()
                / y.len() as f64
        };
        let mut curve = vec![loss(&raw)];
        for trees in &self.rounds {
            for (k, tree) in trees.iter().enumerate() {
                let v = tree.predict_values(x)?;
                raw.column_mut(k).iter_mut().zip(v).for_each(|(r, v)| *r += v);
            }
            curve.push(loss(&raw));
        }
        Ok(curve)
    }
}

impl Classifier for GradBoostModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut raw = self.raw_scores(x, self.rounds.len())?;
        for mut row in raw.axis_iter_mut(Axis(0)) {
            let p = softmax(&row.to_vec());
            row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
        }
        Ok(raw)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let raw = self.raw_scores(x, self.rounds.len())?;
        Ok(raw.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect())
    }
}
