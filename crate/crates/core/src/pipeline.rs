//! End-to-end experiment: clean, split, build feature views, tune every base
//! model on every view, combine the tuned models, evaluate on the held-out
//! rows and report.
//!
//! Everything that fits anything lives in [`train_stage`], which only ever
//! receives the training rows.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{Artifact, NamedView, ARTIFACT_VERSION};
use crate::dataio::{self, Dataset, DatasetDescriptor, ImputeStrategy};
use crate::ensemble::{
    compute_member_weights, fit_stacking, predict_stacking, predict_voting, MemberPipeline, StackingEnsemble, VotingEnsemble,
    VotingMode,
};
use crate::error::{Error, Result, StageContext};
use crate::featsel::{rfe_cv, tune_k_by_cv};
use crate::metrics::{confusion, compute_metrics};
use crate::model::{Classifier, Recipe};
use crate::models::{FittedModel, ModelKind, ModelParams};
use crate::modelselect::{cross_validate, grid_search_prepared, stratified_kfold, Candidate, ParamGrid, PreparedFold, SearchResult};
use crate::report::{
    BaseResult, BestSummary, ConfigSummary, DatasetSummary, EnsembleResult, EnvironmentStamp, ExperimentReport, MemberSummary,
    MetricSummary, ProtocolSummary, SearchAudit, SelectionAudit, REPORT_SCHEMA_VERSION,
};
use crate::seed::derive_seed;
use crate::view::{FittedMember, FittedView, MemberRecipe, StepRecipe, ViewRecipe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigId {
    Original,
    Normalized,
    Kbest,
    Rfecv,
    Pca90,
    Pca95,
    Pca99,
    Alg1Chain,
}

impl ConfigId {
    pub const ALL: [ConfigId; 8] = [
        ConfigId::Original,
        ConfigId::Normalized,
        ConfigId::Kbest,
        ConfigId::Rfecv,
        ConfigId::Pca90,
        ConfigId::Pca95,
        ConfigId::Pca99,
        ConfigId::Alg1Chain,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ConfigId::Original => "original",
            ConfigId::Normalized => "normalized",
            ConfigId::Kbest => "kbest",
            ConfigId::Rfecv => "rfecv",
            ConfigId::Pca90 => "pca90",
            ConfigId::Pca95 => "pca95",
            ConfigId::Pca99 => "pca99",
            ConfigId::Alg1Chain => "alg1_chain",
        }
    }

    fn pca_target(self) -> Option<f64> {
        match self {
            ConfigId::Pca90 => Some(0.90),
            ConfigId::Pca95 | ConfigId::Alg1Chain => Some(0.95),
            ConfigId::Pca99 => Some(0.99),
            _ => None,
        }
    }
}

impl std::fmt::Display for ConfigId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleViewPolicy {
    /// Each member uses the configuration that won its own CV comparison.
    #[default]
    PerMemberBest,
    /// Every member uses `shared_config`.
    Shared,
}

fn default_seed() -> u64 {
    42
}
fn default_test_fraction() -> f64 {
    0.25
}
fn default_tuning_folds() -> usize {
    10
}
fn default_five() -> usize {
    5
}
fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_configs() -> Vec<ConfigId> {
    ConfigId::ALL.to_vec()
}
fn default_shared_config() -> ConfigId {
    ConfigId::Normalized
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetDescriptor,
    /// CSV location; the command line may override it.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_configs")]
    pub configs: Vec<ConfigId>,
    /// Per-model grid overrides; missing models use the built-in grid.
    #[serde(default)]
    pub grids: IndexMap<ModelKind, ParamGrid>,
    #[serde(default = "default_tuning_folds")]
    pub tuning_folds: usize,
    /// Folds for the member-weight CV.
    #[serde(default = "default_five")]
    pub eval_folds: usize,
    #[serde(default = "default_five")]
    pub rfe_folds: usize,
    #[serde(default = "default_one")]
    pub rfe_step: usize,
    #[serde(default = "default_five")]
    pub stacking_folds: usize,
    #[serde(default)]
    pub ensemble_view: EnsembleViewPolicy,
    #[serde(default = "default_shared_config")]
    pub shared_config: ConfigId,
    /// Refit each view inside every tuning fold (otherwise the views fit on
    /// the whole training split are reused).
    #[serde(default = "default_true")]
    pub refit_views_in_fold: bool,
    #[serde(default)]
    pub impute: ImputeStrategy,
    #[serde(default = "default_true")]
    pub drop_duplicates: bool,
    /// Single small candidate per model; does not reproduce published numbers.
    #[serde(default)]
    pub quick: bool,
    /// Keep only the first N enumerated candidates of every grid.
    #[serde(default)]
    pub max_grid_candidates: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetDescriptor) -> Self {
        ExperimentConfig {
            dataset,
            data_path: None,
            seed: default_seed(),
            test_fraction: default_test_fraction(),
            models: default_models(),
            configs: default_configs(),
            grids: IndexMap::new(),
            tuning_folds: default_tuning_folds(),
            eval_folds: 5,
            rfe_folds: 5,
            rfe_step: 1,
            stacking_folds: 5,
            ensemble_view: EnsembleViewPolicy::default(),
            shared_config: default_shared_config(),
            refit_views_in_fold: true,
            impute: ImputeStrategy::default(),
            drop_duplicates: true,
            quick: false,
            max_grid_candidates: None,
            output_dir: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        for (name, k) in [
            ("tuning_folds", self.tuning_folds),
            ("eval_folds", self.eval_folds),
            ("rfe_folds", self.rfe_folds),
            ("stacking_folds", self.stacking_folds),
        ] {
            if k < 2 {
                return bad(format!("{name} must be at least 2"));
            }
        }
        if self.rfe_step == 0 {
            return bad("rfe_step must be positive".into());
        }
        if self.models.len() < 2 {
            return bad("at least two models are needed to build ensembles".into());
        }
        if self.configs.is_empty() {
            return bad("no preprocessing configurations selected".into());
        }
        if self.ensemble_view == EnsembleViewPolicy::Shared && !self.configs.contains(&self.shared_config) {
            return bad(format!("shared_config `{}` is not among the selected configs", self.shared_config));
        }
        if self.max_grid_candidates == Some(0) {
            return bad("max_grid_candidates must be positive".into());
        }
        for (kind, grid) in &self.grids {
            grid.validate()?;
            for c in grid.candidates() {
                ModelParams::from_candidate(*kind, &c)?;
            }
        }
        Ok(())
    }

    pub fn grid_for(&self, kind: ModelKind) -> Vec<Candidate> {
        let grid = if self.quick {
            kind.quick_grid()
        } else {
            self.grids.get(&kind).cloned().unwrap_or_else(|| kind.default_grid())
        };
        let mut c = grid.candidates();
        if let Some(cap) = self.max_grid_candidates {
            c.truncate(cap);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    pub rows_loaded: usize,
    pub imputed_cells: usize,
    pub duplicates_removed: usize,
}

pub fn clean_dataset(raw: &Dataset, cfg: &ExperimentConfig) -> Result<(Dataset, CleaningSummary)> {
    let imputed_cells = raw.missing_cells().len();
    let mut d = if imputed_cells > 0 {
        dataio::impute_missing(raw, cfg.impute)?
    } else {
        raw.clone()
    };
    let before = d.n_rows();
    if cfg.drop_duplicates {
        d = dataio::remove_duplicates(&d);
    }
    let summary = CleaningSummary {
        rows_loaded: raw.n_rows(),
        imputed_cells,
        duplicates_removed: before - d.n_rows(),
    };
    Ok((d, summary))
}

/// A feature view whose structural choices were tuned on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedConfig {
    pub id: ConfigId,
    pub recipe: ViewRecipe,
    pub fitted: FittedView,
    pub output_dim: usize,
}

/// Tunes k for the k-best view and the RFE survivor counts, then fits every
/// requested view on the training rows.
pub fn build_configurations(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ExperimentConfig,
) -> Result<(Vec<PreparedConfig>, SelectionAudit)> {
    let wants = |c: ConfigId| cfg.configs.contains(&c);
    let normalize = ViewRecipe {
        steps: vec![StepRecipe::Normalize],
    };
    let (_, xn) = normalize.fit_transform(x, y, n_classes)?;
    let mut audit = SelectionAudit::default();

    let k = if wants(ConfigId::Kbest) || wants(ConfigId::Alg1Chain) {
        let t = tune_k_by_cv(xn.view(), y, n_classes, cfg.tuning_folds, derive_seed(cfg.seed, &[10]))?;
        let k = t.k;
        audit.kbest = Some(t);
        Some(k)
    } else {
        None
    };
    if wants(ConfigId::Rfecv) {
        let r = rfe_cv(xn.view(), y, n_classes, cfg.rfe_folds, cfg.rfe_step, derive_seed(cfg.seed, &[11]))?;
        audit.rfecv_kept = Some(r.mask.kept_count);
        audit.rfecv_scores = Some(r.scores);
    }
    if wants(ConfigId::Alg1Chain) {
        let kb = ViewRecipe {
            steps: vec![StepRecipe::Normalize, StepRecipe::Kbest { k: k.unwrap() }],
        };
        let (_, xk) = kb.fit_transform(x, y, n_classes)?;
        let r = rfe_cv(xk.view(), y, n_classes, cfg.rfe_folds, cfg.rfe_step, derive_seed(cfg.seed, &[12]))?;
        audit.chain_rfecv_kept = Some(r.mask.kept_count);
        audit.chain_rfecv_scores = Some(r.scores);
    }

    let step = cfg.rfe_step;
    let recipe = |id: ConfigId| {
        let mut steps = match id {
            ConfigId::Original => vec![],
            _ => vec![StepRecipe::Normalize],
        };
        match id {
            ConfigId::Kbest => steps.push(StepRecipe::Kbest { k: k.unwrap() }),
            ConfigId::Rfecv => steps.push(StepRecipe::Rfe {
                keep: audit.rfecv_kept.unwrap(),
                step,
            }),
            ConfigId::Alg1Chain => {
                steps.push(StepRecipe::Kbest { k: k.unwrap() });
                steps.push(StepRecipe::Rfe {
                    keep: audit.chain_rfecv_kept.unwrap(),
                    step,
                });
            }
            _ => {}
        }
        if let Some(t) = id.pca_target() {
            steps.push(StepRecipe::Pca { variance_target: t });
        }
        ViewRecipe { steps }
    };
    let configs = cfg
        .configs
        .par_iter()
        .map(|&id| {
            let recipe = recipe(id);
            let (fitted, xt) = recipe.fit_transform(x, y, n_classes)?;
            Ok(PreparedConfig {
                id,
                recipe,
                fitted,
                output_dim: xt.ncols(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((configs, audit))
}

/// One (model, configuration) cell after tuning and the final refit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedCell {
    pub model: ModelKind,
    pub config: ConfigId,
    pub search: SearchResult,
    pub params: ModelParams,
    pub fitted: FittedModel,
}

/// Everything fit on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedState {
    pub n_classes: usize,
    pub configs: Vec<PreparedConfig>,
    pub selection: SelectionAudit,
    pub cells: Vec<TunedCell>,
    /// Index into `cells` of each model's winning configuration.
    pub best_cells: Vec<usize>,
    pub members: Vec<MemberPipeline>,
    pub stacking: StackingEnsemble,
}

impl TrainedState {
    pub fn cell(&self, model: ModelKind, config: ConfigId) -> Option<&TunedCell> {
        self.cells.iter().find(|c| c.model == model && c.config == config)
    }

    pub fn voting(&self, mode: VotingMode) -> Result<VotingEnsemble> {
        VotingEnsemble::new(self.members.clone(), mode)
    }
}

fn fold_data(
    configs: &[PreparedConfig],
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ExperimentConfig,
) -> Result<Vec<Vec<PreparedFold>>> {
    let plan = stratified_kfold(y, n_classes, cfg.tuning_folds, derive_seed(cfg.seed, &[20]))?;
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..plan.k).map(move |f| (c, f))).collect();
    let upfront: Vec<Array2<f64>> = if cfg.refit_views_in_fold {
        Vec::new()
    } else {
        configs.iter().map(|c| c.fitted.transform(x)).collect::<Result<_>>()?
    };
    let prepared: Vec<PreparedFold> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let fold = &plan.folds[f];
            if cfg.refit_views_in_fold {
                let raw = PreparedFold::from_fold(x, y, fold);
                let (view, x_train) = configs[c].recipe.fit_transform(raw.x_train.view(), &raw.y_train, n_classes)?;
                Ok(PreparedFold {
                    x_val: view.transform(raw.x_val.view())?,
                    x_train,
                    ..raw
                })
            } else {
                Ok(PreparedFold::from_fold(upfront[c].view(), y, fold))
            }
        })
        .collect::<Result<_>>()?;
    let mut it = prepared.into_iter();
    Ok(configs.iter().map(|_| it.by_ref().take(plan.k).collect()).collect())
}

/// Fits every view, tunes and refits every (model, configuration) cell, and
/// builds the ensembles. Only training rows are passed in.
pub fn train_stage(x: ArrayView2<f64>, y: &[usize], n_classes: usize, cfg: &ExperimentConfig) -> Result<TrainedState> {
    let (configs, selection) = build_configurations(x, y, n_classes, cfg).stage("feature_views")?;
    let folds = fold_data(&configs, x, y, n_classes, cfg).stage("feature_views")?;

    let cell_ids: Vec<(usize, usize)> = (0..cfg.models.len()).flat_map(|m| (0..configs.len()).map(move |c| (m, c))).collect();
    let cells: Vec<TunedCell> = cell_ids
        .par_iter()
        .map(|&(m, c)| {
            let kind = cfg.models[m];
            let candidates = cfg.grid_for(kind);
            let coord = [kind as u64, configs[c].id as u64];
            let search = grid_search_prepared(
                |cand| ModelParams::from_candidate(kind, cand),
                &candidates,
                &folds[c],
                n_classes,
                derive_seed(cfg.seed, &[21, coord[0], coord[1]]),
            )?;
            let params = ModelParams::from_candidate(kind, &search.best_params)?;
            let xt = configs[c].fitted.transform(x)?;
            let fitted = params.fit(xt.view(), y, n_classes, derive_seed(cfg.seed, &[22, coord[0], coord[1]]))?;
            Ok(TunedCell {
                model: kind,
                config: configs[c].id,
                search,
                params,
                fitted,
            })
        })
        .collect::<Result<_>>()
        .stage("grid_search")?;

    let n_cfg = configs.len();
    let best_cells: Vec<usize> = (0..cfg.models.len())
        .map(|m| {
            let row = &cells[m * n_cfg..(m + 1) * n_cfg];
            let mut best = 0;
            for (i, cell) in row.iter().enumerate() {
                if cell.search.best_mean_accuracy > row[best].search.best_mean_accuracy {
                    best = i;
                }
            }
            m * n_cfg + best
        })
        .collect();

    let member_cells: Vec<usize> = match cfg.ensemble_view {
        EnsembleViewPolicy::PerMemberBest => best_cells.clone(),
        EnsembleViewPolicy::Shared => {
            let c = configs.iter().position(|p| p.id == cfg.shared_config).unwrap();
            (0..cfg.models.len()).map(|m| m * n_cfg + c).collect()
        }
    };
    let (members, stacking) = build_ensembles(&configs, &cells, &member_cells, x, y, n_classes, cfg).stage("ensembles")?;
    Ok(TrainedState {
        n_classes,
        configs,
        selection,
        cells,
        best_cells,
        members,
        stacking,
    })
}

fn build_ensembles(
    configs: &[PreparedConfig],
    cells: &[TunedCell],
    member_cells: &[usize],
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ExperimentConfig,
) -> Result<(Vec<MemberPipeline>, StackingEnsemble)> {
    let plan = stratified_kfold(y, n_classes, cfg.eval_folds, derive_seed(cfg.seed, &[30]))?;
    let scored: Vec<(MemberRecipe, f64)> = member_cells
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let cell = &cells[i];
            let view = configs.iter().find(|p| p.id == cell.config).unwrap();
            let recipe = MemberRecipe {
                view: view.recipe.clone(),
                model: cell.params,
            };
            let cv = cross_validate(&recipe, x, y, n_classes, &plan, derive_seed(cfg.seed, &[31, j as u64]))?;
            Ok((recipe, cv.mean_accuracy()))
        })
        .collect::<Result<_>>()?;
    let weights = compute_member_weights(&scored.iter().map(|s| s.1).collect::<Vec<_>>())?;
    let members: Vec<MemberPipeline> = member_cells
        .iter()
        .zip(scored)
        .zip(weights)
        .map(|((&i, (recipe, acc)), w)| {
            let cell = &cells[i];
            let view = configs.iter().find(|p| p.id == cell.config).unwrap();
            MemberPipeline {
                name: cell.model.id().into(),
                config: cell.config.id().into(),
                recipe,
                fitted: FittedMember {
                    view: view.fitted.clone(),
                    model: cell.fitted.clone(),
                },
                member_weight: w,
                cv_accuracy: acc,
            }
        })
        .collect();
    let (stacking, _) = fit_stacking(members.clone(), x, y, n_classes, cfg.stacking_folds, derive_seed(cfg.seed, &[40]))?;
    Ok((members, stacking))
}

pub const STACKING_NAME: &str = "stacking";

fn summarize(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<MetricSummary> {
    let cm = confusion(y_true, y_pred, n_classes)?;
    let m = compute_metrics(&cm)?;
    Ok(MetricSummary::new(&m, cm.counts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub base: Vec<MetricSummary>,
    pub ensembles: Vec<EnsembleResult>,
}

/// Scores every tuned cell and every ensemble on the held-out rows.
pub fn evaluate_stage(state: &TrainedState, x_test: ArrayView2<f64>, y_test: &[usize]) -> Result<Evaluation> {
    let c = state.n_classes;
    let base = state
        .cells
        .par_iter()
        .map(|cell| {
            let view = state.configs.iter().find(|p| p.id == cell.config).unwrap();
            let pred = cell.fitted.predict(view.fitted.transform(x_test)?.view())?;
            summarize(y_test, &pred, c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ensembles = Vec::new();
    for mode in VotingMode::ALL {
        let (pred, _) = predict_voting(&state.voting(mode)?, x_test)?;
        ensembles.push(EnsembleResult {
            name: mode.id().into(),
            calibrated_probabilities: !mode.is_hard(),
            test: summarize(y_test, &pred, c)?,
        });
    }
    let (pred, _) = predict_stacking(&state.stacking, x_test)?;
    ensembles.push(EnsembleResult {
        name: STACKING_NAME.into(),
        calibrated_probabilities: true,
        test: summarize(y_test, &pred, c)?,
    });
    Ok(Evaluation { base, ensembles })
}

/// SHA-256 over the rows' feature bits and labels, in row order.
pub fn hash_rows(x: ArrayView2<f64>, y: &[usize]) -> String {
    let mut h = Sha256::new();
    for (row, &label) in x.axis_iter(Axis(0)).zip(y) {
        for v in row {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((label as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub artifact: Artifact,
    pub state: TrainedState,
}

pub fn run_experiment(cfg: &ExperimentConfig, data_path: &Path) -> Result<ExperimentOutcome> {
    let raw = dataio::load_csv_dataset(data_path, &cfg.dataset).stage("load")?;
    run_on_dataset(cfg, &raw)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, raw: &Dataset) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (data, cleaning) = clean_dataset(raw, cfg).stage("clean")?;
    let n_classes = data.n_classes();
    let split = dataio::stratified_split(&data.labels, n_classes, cfg.test_fraction, cfg.seed).stage("split")?;
    let train = data.select_rows(&split.train_rows);
    let test = data.select_rows(&split.test_rows);
    let test_hash = hash_rows(test.features.view(), &test.labels);

    let state = train_stage(train.features.view(), &train.labels, n_classes, cfg)?;
    let eval = evaluate_stage(&state, test.features.view(), &test.labels).stage("evaluate")?;
    if hash_rows(test.features.view(), &test.labels) != test_hash {
        return Err(Error::Stage {
            stage: "evaluate",
            source: Box::new(Error::Degenerate("test rows changed during the run".into())),
        });
    }

    let report = assemble_report(cfg, &data, &cleaning, &train, &test, test_hash, &state, &eval);
    let artifact = Artifact {
        config: cfg.clone(),
        feature_names: data.feature_names.clone(),
        label_names: data.label_names.clone(),
        views: state
            .configs
            .iter()
            .map(|c| NamedView {
                config: c.id,
                view: c.fitted.clone(),
            })
            .collect(),
        members: state.members.clone(),
        stacking_meta: state.stacking.meta.clone(),
        stacking_folds: state.stacking.oof_folds,
        report: report.clone(),
    };
    Ok(ExperimentOutcome { report, artifact, state })
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    cfg: &ExperimentConfig,
    data: &Dataset,
    cleaning: &CleaningSummary,
    train: &Dataset,
    test: &Dataset,
    test_hash: String,
    state: &TrainedState,
    eval: &Evaluation,
) -> ExperimentReport {
    let base_results: Vec<BaseResult> = state
        .cells
        .iter()
        .zip(&eval.base)
        .enumerate()
        .map(|(i, (cell, test))| {
            let cand = &cell.search.candidates[cell.search.best_index];
            BaseResult {
                model: cell.model.id().into(),
                config: cell.config.id().into(),
                best_params: cell.search.best_params.clone(),
                cv_mean_accuracy: cand.mean_accuracy,
                cv_std_accuracy: cand.std_accuracy,
                test: test.clone(),
                is_best_config: state.best_cells.contains(&i),
            }
        })
        .collect();

    let mut best = BestSummary {
        model: String::new(),
        config: String::new(),
        accuracy: f64::NEG_INFINITY,
    };
    for r in base_results.iter().filter(|r| r.is_best_config) {
        if r.test.accuracy > best.accuracy {
            best = BestSummary {
                model: r.model.clone(),
                config: r.config.clone(),
                accuracy: r.test.accuracy,
            };
        }
    }
    let ensemble_config = match cfg.ensemble_view {
        EnsembleViewPolicy::PerMemberBest => "per_member_best".to_string(),
        EnsembleViewPolicy::Shared => cfg.shared_config.id().to_string(),
    };
    for e in &eval.ensembles {
        if e.test.accuracy > best.accuracy {
            best = BestSummary {
                model: e.name.clone(),
                config: ensemble_config.clone(),
                accuracy: e.test.accuracy,
            };
        }
    }

    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: DatasetSummary {
            name: cfg.dataset.name.clone(),
            comparison_set: cfg.dataset.comparison_set.clone(),
            rows_loaded: cleaning.rows_loaded,
            rows_after_cleaning: data.n_rows(),
            imputed_cells: cleaning.imputed_cells,
            duplicates_removed: cleaning.duplicates_removed,
            features: data.features.ncols(),
            class_labels: data.label_names.clone(),
            class_counts: data.class_counts(),
            train_rows: train.n_rows(),
            test_rows: test.n_rows(),
            test_rows_sha256: test_hash,
        },
        protocol: ProtocolSummary {
            seed: cfg.seed,
            test_fraction: cfg.test_fraction,
            tuning_folds: cfg.tuning_folds,
            eval_folds: cfg.eval_folds,
            rfe_folds: cfg.rfe_folds,
            stacking_folds: cfg.stacking_folds,
            refit_views_in_fold: cfg.refit_views_in_fold,
            ensemble_view: ensemble_config,
            quick: cfg.quick,
        },
        configurations: state
            .configs
            .iter()
            .map(|c| ConfigSummary {
                id: c.id.id().into(),
                steps: c.recipe.steps.iter().map(step_label).collect(),
                output_dim: c.output_dim,
            })
            .collect(),
        selection: state.selection.clone(),
        base_results,
        members: state
            .members
            .iter()
            .map(|m| MemberSummary {
                model: m.name.clone(),
                config: m.config.clone(),
                cv_accuracy: m.cv_accuracy,
                weight: m.member_weight,
            })
            .collect(),
        ensembles: eval.ensembles.clone(),
        best,
        search: state
            .cells
            .iter()
            .map(|c| SearchAudit {
                model: c.model.id().into(),
                config: c.config.id().into(),
                best_index: c.search.best_index,
                candidates: c.search.candidates.clone(),
            })
            .collect(),
        environment: EnvironmentStamp {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            report_schema: REPORT_SCHEMA_VERSION,
            artifact_format: ARTIFACT_VERSION,
        },
    }
}

fn step_label(s: &StepRecipe) -> String {
    match s {
        StepRecipe::Normalize => "minmax".into(),
        StepRecipe::Kbest { k } => format!("kbest(k={k})"),
        StepRecipe::Rfe { keep, .. } => format!("rfe(keep={keep})"),
        StepRecipe::Pca { variance_target } => format!("pca({variance_target})"),
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const TABLES_FILE: &str = "tables.md";
pub const ARTIFACT_FILE: &str = "model.slab";

/// Writes report.json, tables.md and the artifact into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    let io = |path: PathBuf| move |source| Error::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let p = dir.join(REPORT_FILE);
    std::fs::write(&p, outcome.report.to_json()?).map_err(io(p.clone()))?;
    let p = dir.join(TABLES_FILE);
    std::fs::write(&p, outcome.report.render_tables()).map_err(io(p.clone()))?;
    crate::artifact::save_artifact(&outcome.artifact, &dir.join(ARTIFACT_FILE))
}
