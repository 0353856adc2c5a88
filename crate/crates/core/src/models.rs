//! The six base model families behind one parameter type and one fitted type.

use std::fmt;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cart::FeatureSubsample;
use crate::error::{Error, Result};
use crate::model::{Classifier, Recipe};
use crate::modelselect::{Candidate, ParamGrid, ParamValue};
use crate::svm::{fit_svm_multiclass, Gamma, KernelKind, MulticlassSvm, SvmParams};
use crate::tree_ensembles::{
    fit_adaboost, fit_bagging, fit_gradient_boosting, fit_random_forest, fit_regularized_boosting, AdaBoostModel,
    AdaBoostParams, BoostParams, ForestModel, ForestParams, GradBoostModel, Regularization,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Svm,
    RandomForest,
    Bagging,
    Adaboost,
    GradientBoosting,
    RegularizedBoosting,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Svm,
        ModelKind::RandomForest,
        ModelKind::Bagging,
        ModelKind::Adaboost,
        ModelKind::GradientBoosting,
        ModelKind::RegularizedBoosting,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Bagging => "bagging",
            ModelKind::Adaboost => "adaboost",
            ModelKind::GradientBoosting => "gradient_boosting",
            ModelKind::RegularizedBoosting => "regularized_boosting",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Svm => "SVM",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::Bagging => "Bagging",
            ModelKind::Adaboost => "AdaBoost",
            ModelKind::GradientBoosting => "Gradient Boosting",
            ModelKind::RegularizedBoosting => "XGBoost-style Boosting",
        }
    }

    pub fn default_grid(self) -> ParamGrid {
        let ints = |v: &[i64]| v.iter().map(|&i| ParamValue::Int(i)).collect::<Vec<_>>();
        let floats = |v: &[f64]| v.iter().map(|&f| ParamValue::Float(f)).collect::<Vec<_>>();
        let text = |s: &str| ParamValue::Text(s.into());
        let block = |pairs: Vec<(&str, Vec<ParamValue>)>| pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<IndexMap<_, _>>();
        match self {
            ModelKind::Svm => ParamGrid {
                blocks: vec![
                    block(vec![("kernel", vec![text("linear")]), ("c", floats(&[0.1, 1.0, 10.0, 100.0]))]),
                    block(vec![
                        ("kernel", vec![text("rbf")]),
                        ("c", floats(&[0.1, 1.0, 10.0, 100.0])),
                        ("gamma", vec![text("scale"), ParamValue::Float(0.01), ParamValue::Float(0.1), ParamValue::Float(1.0)]),
                    ]),
                ],
            },
            ModelKind::RandomForest | ModelKind::Bagging => ParamGrid::single(block(vec![
                ("n_estimators", ints(&[100, 200])),
                ("max_depth", vec![ParamValue::Int(3), ParamValue::Int(5), text("none")]),
            ])),
            ModelKind::Adaboost => ParamGrid::single(block(vec![("n_estimators", ints(&[100, 200])), ("max_depth", ints(&[1, 3]))])),
            ModelKind::GradientBoosting => ParamGrid::single(block(vec![
                ("n_estimators", ints(&[100, 200])),
                ("learning_rate", floats(&[0.1, 0.3])),
                ("max_depth", ints(&[1, 3, 5])),
            ])),
            ModelKind::RegularizedBoosting => ParamGrid::single(block(vec![
                ("n_estimators", ints(&[100, 200])),
                ("learning_rate", floats(&[0.1, 0.3])),
                ("max_depth", ints(&[1, 3, 5])),
                ("lambda", floats(&[0.0, 1.0])),
                ("gamma", floats(&[0.0])),
            ])),
        }
    }

    /// Single small candidate for smoke runs.
    pub fn quick_grid(self) -> ParamGrid {
        let one = |pairs: &[(&str, ParamValue)]| {
            ParamGrid::single(pairs.iter().map(|(k, v)| (k.to_string(), vec![v.clone()])).collect())
        };
        match self {
            ModelKind::Svm => one(&[("kernel", ParamValue::Text("rbf".into())), ("c", ParamValue::Float(10.0)), ("gamma", ParamValue::Text("scale".into()))]),
            ModelKind::RandomForest | ModelKind::Bagging => one(&[("n_estimators", ParamValue::Int(30)), ("max_depth", ParamValue::Text("none".into()))]),
            ModelKind::Adaboost => one(&[("n_estimators", ParamValue::Int(30)), ("max_depth", ParamValue::Int(1))]),
            ModelKind::GradientBoosting => one(&[("n_estimators", ParamValue::Int(30)), ("learning_rate", ParamValue::Float(0.3)), ("max_depth", ParamValue::Int(3))]),
            ModelKind::RegularizedBoosting => one(&[
                ("n_estimators", ParamValue::Int(30)),
                ("learning_rate", ParamValue::Float(0.3)),
                ("max_depth", ParamValue::Int(3)),
                ("lambda", ParamValue::Float(1.0)),
            ]),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    Svm(SvmParams),
    RandomForest(ForestParams),
    Bagging(ForestParams),
    Adaboost(AdaBoostParams),
    GradientBoosting(BoostParams),
    RegularizedBoosting { boost: BoostParams, reg: Regularization },
}

fn bad(kind: ModelKind, key: &str, v: &ParamValue) -> Error {
    Error::Config(format!("{kind}: invalid value `{v}` for `{key}`"))
}

fn get_usize(kind: ModelKind, key: &str, v: &ParamValue) -> Result<usize> {
    v.as_usize().ok_or_else(|| bad(kind, key, v))
}

fn get_f64(kind: ModelKind, key: &str, v: &ParamValue) -> Result<f64> {
    v.as_f64().filter(|f| f.is_finite()).ok_or_else(|| bad(kind, key, v))
}

fn get_depth(kind: ModelKind, key: &str, v: &ParamValue) -> Result<Option<usize>> {
    match v.as_str() {
        Some("none") => Ok(None),
        _ => get_usize(kind, key, v).map(Some),
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Svm(_) => ModelKind::Svm,
            ModelParams::RandomForest(_) => ModelKind::RandomForest,
            ModelParams::Bagging(_) => ModelKind::Bagging,
            ModelParams::Adaboost(_) => ModelKind::Adaboost,
            ModelParams::GradientBoosting(_) => ModelKind::GradientBoosting,
            ModelParams::RegularizedBoosting { .. } => ModelKind::RegularizedBoosting,
        }
    }

    pub fn defaults(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Svm => ModelParams::Svm(SvmParams::default()),
            ModelKind::RandomForest => ModelParams::RandomForest(ForestParams::random_forest(100)),
            ModelKind::Bagging => ModelParams::Bagging(ForestParams::bagging(100)),
            ModelKind::Adaboost => ModelParams::Adaboost(AdaBoostParams::default()),
            ModelKind::GradientBoosting => ModelParams::GradientBoosting(BoostParams::default()),
            ModelKind::RegularizedBoosting => ModelParams::RegularizedBoosting {
                boost: BoostParams::default(),
                reg: Regularization::default(),
            },
        }
    }

    /// Defaults of `kind` overridden by the named grid values.
    pub fn from_candidate(kind: ModelKind, cand: &Candidate) -> Result<Self> {
        let mut p = Self::defaults(kind);
        for (key, v) in cand {
            let k = key.as_str();
            match (&mut p, k) {
                (ModelParams::Svm(s), "c") => s.c = get_f64(kind, k, v)?,
                (ModelParams::Svm(s), "kernel") => {
                    let kk = match v.as_str() {
                        Some("linear") => KernelKind::Linear,
                        Some("rbf") => KernelKind::Rbf,
                        Some("poly" | "polynomial") => KernelKind::Polynomial,
                        _ => return Err(bad(kind, k, v)),
                    };
                    s.kernel.kind = kk;
                }
                (ModelParams::Svm(s), "gamma") => {
                    s.kernel.gamma = match v.as_str() {
                        Some("scale") => Gamma::Scale,
                        Some(_) => return Err(bad(kind, k, v)),
                        None => Gamma::Value(get_f64(kind, k, v)?),
                    }
                }
                (ModelParams::Svm(s), "degree") => s.kernel.degree = get_usize(kind, k, v)? as u32,
                (ModelParams::Svm(s), "coef0") => s.kernel.coef0 = get_f64(kind, k, v)?,
                (ModelParams::Svm(s), "tol") => s.tol = get_f64(kind, k, v)?,
                (ModelParams::RandomForest(f) | ModelParams::Bagging(f), "n_estimators") => f.n_trees = get_usize(kind, k, v)?,
                (ModelParams::RandomForest(f) | ModelParams::Bagging(f), "max_depth") => f.max_depth = get_depth(kind, k, v)?,
                (ModelParams::RandomForest(f) | ModelParams::Bagging(f), "min_samples_leaf") => f.min_samples_leaf = get_usize(kind, k, v)?,
                (ModelParams::RandomForest(f) | ModelParams::Bagging(f), "min_samples_split") => f.min_samples_split = get_usize(kind, k, v)?,
                (ModelParams::RandomForest(f), "max_features") => {
                    f.feature_subsample = match v.as_str() {
                        Some("sqrt") => FeatureSubsample::Sqrt,
                        Some("log2") => FeatureSubsample::Log2,
                        Some("all") => FeatureSubsample::All,
                        Some(_) => return Err(bad(kind, k, v)),
                        None => FeatureSubsample::Count(get_usize(kind, k, v)?),
                    }
                }
                (ModelParams::Adaboost(a), "n_estimators") => a.n_stages = get_usize(kind, k, v)?,
                (ModelParams::Adaboost(a), "max_depth") => a.max_depth = get_usize(kind, k, v)?,
                (ModelParams::GradientBoosting(b) | ModelParams::RegularizedBoosting { boost: b, .. }, "n_estimators") => b.n_rounds = get_usize(kind, k, v)?,
                (ModelParams::GradientBoosting(b) | ModelParams::RegularizedBoosting { boost: b, .. }, "learning_rate") => {
                    b.learning_rate = get_f64(kind, k, v)?
                }
                (ModelParams::GradientBoosting(b) | ModelParams::RegularizedBoosting { boost: b, .. }, "max_depth") => b.max_depth = get_usize(kind, k, v)?,
                (ModelParams::RegularizedBoosting { reg, .. }, "lambda") => reg.lambda = get_f64(kind, k, v)?,
                (ModelParams::RegularizedBoosting { reg, .. }, "gamma") => reg.gamma = get_f64(kind, k, v)?,
                (ModelParams::RegularizedBoosting { reg, .. }, "min_child_weight") => reg.min_child_weight = get_f64(kind, k, v)?,
                _ => return Err(Error::Config(format!("{kind}: unknown hyperparameter `{key}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ModelParams::Svm(s) => s.c > 0.0 && s.tol > 0.0 && !matches!(s.kernel.gamma, Gamma::Value(g) if g <= 0.0),
            ModelParams::RandomForest(f) | ModelParams::Bagging(f) => f.n_trees >= 1 && f.min_samples_leaf >= 1 && f.min_samples_split >= 2,
            ModelParams::Adaboost(a) => a.n_stages >= 1,
            ModelParams::GradientBoosting(b) => b.n_rounds >= 1 && b.learning_rate > 0.0 && b.learning_rate <= 1.0,
            ModelParams::RegularizedBoosting { boost: b, reg } => {
                b.n_rounds >= 1 && b.learning_rate > 0.0 && b.learning_rate <= 1.0 && reg.lambda >= 0.0 && reg.gamma >= 0.0 && reg.min_child_weight >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{}: hyperparameters out of range: {self:?}", self.kind())))
        }
    }
}

impl Recipe for ModelParams {
    type Model = FittedModel;

    fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Result<FittedModel> {
        Ok(match self {
            ModelParams::Svm(p) => FittedModel::Svm(fit_svm_multiclass(x, y, n_classes, p, seed)?),
            ModelParams::RandomForest(p) => FittedModel::Forest(fit_random_forest(x, y, n_classes, p, seed)?),
            ModelParams::Bagging(p) => FittedModel::Forest(fit_bagging(x, y, n_classes, p, seed)?),
            ModelParams::Adaboost(p) => FittedModel::Adaboost(fit_adaboost(x, y, n_classes, p, seed)?),
            ModelParams::GradientBoosting(p) => FittedModel::Boost(fit_gradient_boosting(x, y, n_classes, p)?),
            ModelParams::RegularizedBoosting { boost, reg } => FittedModel::Boost(fit_regularized_boosting(x, y, n_classes, boost, reg)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Svm(MulticlassSvm),
    Forest(ForestModel),
    Adaboost(AdaBoostModel),
    Boost(GradBoostModel),
}

impl Classifier for FittedModel {
    fn n_classes(&self) -> usize {
        match self {
            FittedModel::Svm(m) => m.n_classes(),
            FittedModel::Forest(m) => m.n_classes(),
            FittedModel::Adaboost(m) => m.n_classes(),
            FittedModel::Boost(m) => m.n_classes(),
        }
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            FittedModel::Svm(m) => m.predict_proba(x),
            FittedModel::Forest(m) => m.predict_proba(x),
            FittedModel::Adaboost(m) => m.predict_proba(x),
            FittedModel::Boost(m) => m.predict_proba(x),
        }
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        match self {
            FittedModel::Svm(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
            FittedModel::Adaboost(m) => m.predict(x),
            FittedModel::Boost(m) => m.predict(x),
        }
    }
}
