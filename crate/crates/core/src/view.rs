//! Feature views: an ordered chain of fitted transforms a model consumes.
//!
//! A [`ViewRecipe`] freezes the structural choices (how many columns to keep,
//! which variance target) so the same view can be refit on any row subset.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::decomp::{apply_pca, fit_pca, PcaModel};
use crate::error::Result;
use crate::featsel::{anova_f_scores, rfe_eliminate, select_top_k, SelectionMask};
use crate::model::{Classifier, Recipe};
use crate::models::{FittedModel, ModelParams};
use crate::preprocess::{apply_minmax, fit_minmax, ScalerParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRecipe {
    Normalize,
    Kbest { k: usize },
    Rfe { keep: usize, step: usize },
    Pca { variance_target: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewRecipe {
    pub steps: Vec<StepRecipe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedStep {
    Scaler(ScalerParams),
    Mask(SelectionMask),
    Pca(PcaModel),
}

impl FittedStep {
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            FittedStep::Scaler(p) => apply_minmax(x, p),
            FittedStep::Mask(m) => m.apply(x),
            FittedStep::Pca(p) => apply_pca(x, p),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FittedView {
    pub steps: Vec<FittedStep>,
}

impl FittedView {
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut cur = x.to_owned();
        for s in &self.steps {
            cur = s.apply(cur.view())?;
        }
        Ok(cur)
    }
}

impl ViewRecipe {
    pub fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<FittedView> {
        self.fit_transform(x, y, n_classes).map(|(v, _)| v)
    }

    /// Fits every step on the output of the previous one and returns the
    /// transformed training matrix alongside the view.
    pub fn fit_transform(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<(FittedView, Array2<f64>)> {
        let mut cur = x.to_owned();
        let mut steps = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            let fitted = match *s {
                StepRecipe::Normalize => FittedStep::Scaler(fit_minmax(cur.view())?),
                StepRecipe::Kbest { k } => {
                    let scores = anova_f_scores(cur.view(), y, n_classes)?;
                    FittedStep::Mask(select_top_k(&scores, k.min(cur.ncols()))?)
                }
                StepRecipe::Rfe { keep, step } => FittedStep::Mask(rfe_eliminate(cur.view(), y, n_classes, keep.min(cur.ncols()), step)?),
                StepRecipe::Pca { variance_target } => FittedStep::Pca(fit_pca(cur.view(), variance_target)?),
            };
            cur = fitted.apply(cur.view())?;
            steps.push(fitted);
        }
        Ok((FittedView { steps }, cur))
    }
}

/// A view recipe plus a model family with fixed hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecipe {
    pub view: ViewRecipe,
    pub model: ModelParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedMember {
    pub view: FittedView,
    pub model: FittedModel,
}

impl Recipe for MemberRecipe {
    type Model = FittedMember;

    fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Result<FittedMember> {
        let (view, xt) = self.view.fit_transform(x, y, n_classes)?;
        let model = self.model.fit(xt.view(), y, n_classes, seed)?;
        Ok(FittedMember { view, model })
    }
}

impl Classifier for FittedMember {
    fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.model.predict_proba(self.view.transform(x)?.view())
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.model.predict(self.view.transform(x)?.view())
    }
}
