//! Experiment report schema and its derived outputs: markdown tables, figure
//! CSVs and report-to-report comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featsel::KTuning;
use crate::metrics::MetricReport;
use crate::modelselect::{Candidate, CandidateResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricSummary {
    pub fn new(m: &MetricReport, confusion: Vec<Vec<u64>>) -> Self {
        MetricSummary {
            accuracy: m.accuracy,
            precision: m.macro_precision,
            recall: m.macro_recall,
            f1: m.macro_f1,
            confusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub comparison_set: Option<String>,
    pub rows_loaded: usize,
    pub rows_after_cleaning: usize,
    pub imputed_cells: usize,
    pub duplicates_removed: usize,
    pub features: usize,
    pub class_labels: Vec<String>,
    pub class_counts: Vec<usize>,
    pub train_rows: usize,
    pub test_rows: usize,
    /// SHA-256 of the test rows, taken before any fitting and checked after.
    pub test_rows_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub seed: u64,
    pub test_fraction: f64,
    pub tuning_folds: usize,
    pub eval_folds: usize,
    pub rfe_folds: usize,
    pub stacking_folds: usize,
    pub refit_views_in_fold: bool,
    pub ensemble_view: String,
    pub quick: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub id: String,
    pub steps: Vec<String>,
    pub output_dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub kbest: Option<KTuning>,
    /// (surviving feature count, mean CV accuracy)
    pub rfecv_scores: Option<Vec<(usize, f64)>>,
    pub rfecv_kept: Option<usize>,
    pub chain_rfecv_scores: Option<Vec<(usize, f64)>>,
    pub chain_rfecv_kept: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseResult {
    pub model: String,
    pub config: String,
    pub best_params: Candidate,
    pub cv_mean_accuracy: f64,
    pub cv_std_accuracy: f64,
    pub test: MetricSummary,
    pub is_best_config: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub model: String,
    pub config: String,
    pub cv_accuracy: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub name: String,
    /// False for hard voting, whose probabilities are vote shares.
    pub calibrated_probabilities: bool,
    pub test: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchAudit {
    pub model: String,
    pub config: String,
    pub best_index: usize,
    pub candidates: Vec<CandidateResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub model: String,
    pub config: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    pub package: String,
    pub version: String,
    pub report_schema: u32,
    pub artifact_format: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub dataset: DatasetSummary,
    pub protocol: ProtocolSummary,
    pub configurations: Vec<ConfigSummary>,
    pub selection: SelectionAudit,
    pub base_results: Vec<BaseResult>,
    pub members: Vec<MemberSummary>,
    pub ensembles: Vec<EnsembleResult>,
    pub best: BestSummary,
    pub search: Vec<SearchAudit>,
    pub environment: EnvironmentStamp,
}

fn pct(v: f64) -> String {
    format!("{:.3}", 100.0 * v)
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: ExperimentReport = serde_json::from_str(s).map_err(|e| Error::Format(format!("report does not parse: {e}")))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::IncompatibleVersion {
                found: r.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(r)
    }

    pub fn best_base_results(&self) -> impl Iterator<Item = &BaseResult> {
        self.base_results.iter().filter(|r| r.is_best_config)
    }

    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        let d = &self.dataset;
        let _ = writeln!(out, "# Results: {}\n", d.name);
        let _ = writeln!(
            out,
            "{} rows after cleaning ({} train / {} test), {} features, {} classes, seed {}.\n",
            d.rows_after_cleaning,
            d.train_rows,
            d.test_rows,
            d.features,
            d.class_labels.len(),
            self.protocol.seed
        );
        out.push_str("## Base models (best configuration by CV accuracy)\n\n");
        out.push_str("| Model | Configuration | Accuracy (%) | F1 (%) | Precision (%) | Recall (%) |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for r in self.best_base_results() {
            let t = &r.test;
            let _ = writeln!(out, "| {} | {} | {} | {} | {} | {} |", r.model, r.config, pct(t.accuracy), pct(t.f1), pct(t.precision), pct(t.recall));
        }
        out.push_str("\n## Ensembles\n\n");
        out.push_str("| Ensemble | Accuracy (%) | F1 (%) | Precision (%) | Recall (%) |\n");
        out.push_str("|---|---|---|---|---|\n");
        for e in &self.ensembles {
            let t = &e.test;
            let _ = writeln!(out, "| {} | {} | {} | {} | {} |", e.name, pct(t.accuracy), pct(t.f1), pct(t.precision), pct(t.recall));
        }
        out.push_str("\n## Test accuracy (%) by model and configuration\n\n");
        let configs: Vec<&str> = self.configurations.iter().map(|c| c.id.as_str()).collect();
        let _ = writeln!(out, "| Model | {} |", configs.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(configs.len()));
        let mut models: Vec<&str> = Vec::new();
        for r in &self.base_results {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        for m in models {
            let cells: Vec<String> = configs
                .iter()
                .map(|c| {
                    self.base_results
                        .iter()
                        .find(|r| r.model == m && r.config == *c)
                        .map_or_else(|| "-".into(), |r| pct(r.test.accuracy))
                })
                .collect();
            let _ = writeln!(out, "| {m} | {} |", cells.join(" | "));
        }
        out
    }
}

/// Accuracies published by earlier work on the same public datasets, copied
/// as reported (their splits and protocols may differ from ours).
pub fn prior_reported(comparison_set: &str) -> &'static [(&'static str, f64)] {
    match comparison_set {
        "dataset1" => &[
            ("prior_hybrid_ensemble", 92.41),
            ("prior_random_forest_a", 88.0),
            ("prior_random_forest_b", 88.0),
        ],
        "dataset2" => &[("prior_svm", 95.0), ("prior_logistic_regression", 99.0)],
        _ => &[],
    }
}

pub const COMPARISON_SETS: [&str; 2] = ["dataset1", "dataset2"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub label: String,
    pub accuracy_percent: f64,
    pub source: String,
}

/// Figure rows for one comparison set: this run's best-config base models and
/// ensembles, then the prior reported numbers.
pub fn figure_rows(comparison_set: &str, reports: &[&ExperimentReport]) -> Vec<FigureRow> {
    let mut rows = Vec::new();
    for r in reports.iter().filter(|r| r.dataset.comparison_set.as_deref() == Some(comparison_set)) {
        for b in r.best_base_results() {
            rows.push(FigureRow {
                label: format!("{} ({})", b.model, b.config),
                accuracy_percent: 100.0 * b.test.accuracy,
                source: "this_run".into(),
            });
        }
        for e in &r.ensembles {
            rows.push(FigureRow {
                label: e.name.clone(),
                accuracy_percent: 100.0 * e.test.accuracy,
                source: "this_run".into(),
            });
        }
    }
    for (label, acc) in prior_reported(comparison_set) {
        rows.push(FigureRow {
            label: (*label).into(),
            accuracy_percent: *acc,
            source: "prior_reported".into(),
        });
    }
    rows
}

pub fn figure_csv(rows: &[FigureRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyDelta {
    pub label: String,
    pub a: f64,
    pub b: f64,
    /// b - a in percentage points.
    pub delta_points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub dataset_mismatch: Option<(String, String)>,
    pub deltas: Vec<AccuracyDelta>,
}

fn accuracy_cells(r: &ExperimentReport) -> Vec<(String, f64)> {
    r.base_results
        .iter()
        .map(|b| (format!("{}/{}", b.model, b.config), b.test.accuracy))
        .chain(r.ensembles.iter().map(|e| (e.name.clone(), e.test.accuracy)))
        .collect()
}

/// Per-cell accuracy deltas. Both reports must have the same set of
/// (model, configuration) and ensemble cells.
pub fn compare_reports(a: &ExperimentReport, b: &ExperimentReport) -> Result<Comparison> {
    let ca = accuracy_cells(a);
    let cb = accuracy_cells(b);
    let labels = |c: &[(String, f64)]| c.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>();
    if labels(&ca) != labels(&cb) {
        return Err(Error::Schema("reports cover different models, configurations or ensembles".into()));
    }
    let deltas = ca
        .into_iter()
        .zip(cb)
        .map(|((label, x), (_, y))| AccuracyDelta {
            label,
            a: x,
            b: y,
            delta_points: 100.0 * (y - x),
        })
        .collect();
    let dataset_mismatch = (a.dataset.name != b.dataset.name).then(|| (a.dataset.name.clone(), b.dataset.name.clone()));
    Ok(Comparison { dataset_mismatch, deltas })
}
