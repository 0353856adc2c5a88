//! Stratified K-fold plans, cross-validation and exhaustive grid search.

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Classifier, Recipe};
use crate::seed::{derive_seed, rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub k: usize,
    pub seed: u64,
}

/// Shuffles each class with its own seeded stream and deals its rows round-robin
/// across folds, continuing the deal position from one class to the next.
pub fn stratified_kfold(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut assignment = vec![0usize; labels.len()];
    let mut deal = 0usize;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {c} has {} rows, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng(derive_seed(seed, &[c as u64])));
        for i in members {
            assignment[i] = deal % k;
            deal += 1;
        }
    }
    let folds = (0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, validation }
        })
        .collect();
    Ok(FoldPlan { folds, k, seed })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub accuracy: Vec<f64>,
    pub macro_f1: Vec<f64>,
}

impl CvScores {
    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracy)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn score_fold<R: Recipe>(
    recipe: &R,
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    fold: &Fold,
    seed: u64,
) -> Result<(f64, f64)> {
    let x_train = x.select(Axis(0), &fold.train);
    let y_train: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
    let model = recipe.fit(x_train.view(), &y_train, n_classes, seed)?;
    let x_val = x.select(Axis(0), &fold.validation);
    let y_val: Vec<usize> = fold.validation.iter().map(|&i| y[i]).collect();
    let pred = model.predict(x_val.view())?;
    let report = metrics::evaluate(&y_val, &pred, n_classes)?;
    Ok((report.accuracy, report.macro_f1))
}

/// Fits the recipe on each fold's training rows and scores it on the held-out rows.
/// Fold `f` is fit with seed `derive_seed(seed, [f])`, so the result does not
/// depend on how many worker threads run the folds.
pub fn cross_validate<R: Recipe>(
    recipe: &R,
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    plan: &FoldPlan,
    seed: u64,
) -> Result<CvScores> {
    let task = |(f, fold): (usize, &Fold)| {
        score_fold(recipe, x, y, n_classes, fold, derive_seed(seed, &[f as u64]))
    };
    let results: Vec<(f64, f64)> = plan.folds.par_iter().enumerate().map(task).collect::<Result<_>>()?;
    let (accuracy, macro_f1) = results.into_iter().unzip();
    Ok(CvScores { accuracy, macro_f1 })
}

/// One hyperparameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match self {
            ParamValue::Int(i) if *i >= 0 => Some(*i as usize),
            ParamValue::Float(f) if *f >= 0.0 && f.fract() == 0.0 => Some(*f as usize),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

pub type Candidate = IndexMap<String, ParamValue>;

/// Named parameter lists. Several blocks may be given (e.g. one per kernel);
/// each block's Cartesian product is enumerated in declaration order with the
/// last parameter varying fastest, and blocks follow one another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "GridRepr", into = "GridRepr")]
pub struct ParamGrid {
    pub blocks: Vec<IndexMap<String, Vec<ParamValue>>>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum GridRepr {
    Single(IndexMap<String, Vec<ParamValue>>),
    Many(Vec<IndexMap<String, Vec<ParamValue>>>),
}

impl From<GridRepr> for ParamGrid {
    fn from(r: GridRepr) -> Self {
        match r {
            GridRepr::Single(b) => ParamGrid { blocks: vec![b] },
            GridRepr::Many(blocks) => ParamGrid { blocks },
        }
    }
}

impl From<ParamGrid> for GridRepr {
    fn from(g: ParamGrid) -> Self {
        GridRepr::Many(g.blocks)
    }
}

impl ParamGrid {
    pub fn single(block: IndexMap<String, Vec<ParamValue>>) -> Self {
        ParamGrid { blocks: vec![block] }
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let mut partial: Vec<Candidate> = vec![Candidate::new()];
            for (name, values) in block {
                partial = partial
                    .into_iter()
                    .flat_map(|c| {
                        values.iter().map(move |v| {
                            let mut next = c.clone();
                            next.insert(name.clone(), v.clone());
                            next
                        })
                    })
                    .collect();
            }
            out.extend(partial);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.values().any(|v| v.is_empty())) {
            return Err(Error::Config("parameter grid has an empty candidate list".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: Candidate,
    pub fold_accuracies: Vec<f64>,
    pub fold_macro_f1: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_params: Candidate,
    pub best_mean_accuracy: f64,
    pub candidates: Vec<CandidateResult>,
}

/// One fold's training and validation rows, possibly already transformed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFold {
    pub x_train: Array2<f64>,
    pub y_train: Vec<usize>,
    pub x_val: Array2<f64>,
    pub y_val: Vec<usize>,
}

impl PreparedFold {
    pub fn from_fold(x: ArrayView2<f64>, y: &[usize], fold: &Fold) -> Self {
        PreparedFold {
            x_train: x.select(Axis(0), &fold.train),
            y_train: fold.train.iter().map(|&i| y[i]).collect(),
            x_val: x.select(Axis(0), &fold.validation),
            y_val: fold.validation.iter().map(|&i| y[i]).collect(),
        }
    }
}

/// Scores every candidate on the same fold plan. The winner has the highest
/// mean accuracy; ties go to the earliest enumerated candidate. Task
/// (candidate i, fold f) uses seed `derive_seed(seed, [i, f])`.
pub fn grid_search<R, F>(
    family: F,
    candidates: &[Candidate],
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    plan: &FoldPlan,
    seed: u64,
) -> Result<SearchResult>
where
    R: Recipe,
    F: Fn(&Candidate) -> Result<R> + Sync,
{
    let folds: Vec<PreparedFold> = plan.folds.iter().map(|f| PreparedFold::from_fold(x, y, f)).collect();
    grid_search_prepared(family, candidates, &folds, n_classes, seed)
}

/// [`grid_search`] over folds whose matrices were prepared by the caller
/// (for example with a feature view refit on each fold's training rows).
pub fn grid_search_prepared<R, F>(
    family: F,
    candidates: &[Candidate],
    folds: &[PreparedFold],
    n_classes: usize,
    seed: u64,
) -> Result<SearchResult>
where
    R: Recipe,
    F: Fn(&Candidate) -> Result<R> + Sync,
{
    if candidates.is_empty() || folds.is_empty() {
        return Err(Error::InvalidArgument("grid search over zero candidates or folds".into()));
    }
    let k = folds.len();
    let recipes: Vec<R> = candidates.iter().map(&family).collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let run = |&(c, f): &(usize, usize)| -> Result<(f64, f64)> {
        let fold = &folds[f];
        let model = recipes[c].fit(fold.x_train.view(), &fold.y_train, n_classes, derive_seed(seed, &[c as u64, f as u64]))?;
        let pred = model.predict(fold.x_val.view())?;
        let report = metrics::evaluate(&fold.y_val, &pred, n_classes)?;
        Ok((report.accuracy, report.macro_f1))
    };
    let scores: Vec<(f64, f64)> = tasks.par_iter().map(run).collect::<Result<_>>()?;

    let results: Vec<CandidateResult> = candidates
        .iter()
        .enumerate()
        .map(|(c, params)| {
            let chunk = &scores[c * k..(c + 1) * k];
            let fold_accuracies: Vec<f64> = chunk.iter().map(|s| s.0).collect();
            CandidateResult {
                params: params.clone(),
                fold_macro_f1: chunk.iter().map(|s| s.1).collect(),
                mean_accuracy: mean(&fold_accuracies),
                std_accuracy: std_dev(&fold_accuracies),
                fold_accuracies,
            }
        })
        .collect();
    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_accuracy > results[best_index].mean_accuracy {
            best_index = i;
        }
    }
    Ok(SearchResult {
        best_index,
        best_params: results[best_index].params.clone(),
        best_mean_accuracy: results[best_index].mean_accuracy,
        candidates: results,
    })
}
