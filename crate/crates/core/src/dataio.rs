//! Loading, cleaning and splitting of tabular survey datasets.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

/// Static description of a dataset file: where the target lives and what the
/// published snapshot is supposed to look like.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub name: String,
    pub expected_rows: usize,
    pub expected_feature_count: usize,
    pub target_column: String,
    /// Empty means every non-target column.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    /// Empty means the distinct target values sorted ascending.
    #[serde(default)]
    pub class_labels: Vec<String>,
    /// Which set of published reference accuracies figure data is overlaid with.
    #[serde(default)]
    pub comparison_set: Option<String>,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.expected_feature_count == 0 {
            return Err(Error::Config(format!(
                "dataset `{}`: expected_feature_count must be at least 1",
                self.name
            )));
        }
        if self.feature_columns.iter().any(|c| c == &self.target_column) {
            return Err(Error::Config(format!(
                "dataset `{}`: target column `{}` is listed as a feature",
                self.name, self.target_column
            )));
        }
        Ok(())
    }
}

/// Labeled feature matrix. Missing cells are stored as NaN until imputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub source: DatasetDescriptor,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        feature_names: Vec<String>,
        labels: Vec<usize>,
        label_names: Vec<String>,
        source: DatasetDescriptor,
    ) -> Result<Self> {
        if features.ncols() != feature_names.len() {
            return Err(Error::shape(
                format!("{} feature names", features.ncols()),
                feature_names.len(),
            ));
        }
        if labels.len() != features.nrows() {
            return Err(Error::shape(
                format!("{} labels", features.nrows()),
                labels.len(),
            ));
        }
        if label_names.len() < 2 {
            return Err(Error::Schema(format!(
                "at least two classes are required, found {}",
                label_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::Schema(format!(
                "label index {bad} outside 0..{}",
                label_names.len()
            )));
        }
        Ok(Dataset {
            features,
            feature_names,
            labels,
            label_names,
            source,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// (row, column) of every missing cell in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        self.features
            .indexed_iter()
            .filter(|(_, v)| v.is_nan())
            .map(|(idx, _)| idx)
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            label_names: self.label_names.clone(),
            source: self.source.clone(),
        }
    }
}

pub fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

fn parse_cell(raw: &str) -> f64 {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => f64::NAN,
    }
}

fn sort_label_values(values: &mut [String]) {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => values.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => values.sort(),
    }
}

/// Reads a CSV file with a header row. Non-numeric feature cells become NaN
/// (see [`Dataset::missing_cells`]); rows with an empty target are dropped.
pub fn load_csv_dataset(path: &Path, desc: &DatasetDescriptor) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_dataset(file, desc)
}

pub fn read_csv_dataset<R: std::io::Read>(reader: R, desc: &DatasetDescriptor) -> Result<Dataset> {
    desc.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Format("empty header row".into()));
    }
    let target_idx = header
        .iter()
        .position(|h| h == &desc.target_column)
        .ok_or_else(|| {
            Error::Schema(format!("target column `{}` not in header", desc.target_column))
        })?;
    let feature_idx: Vec<usize> = if desc.feature_columns.is_empty() {
        (0..header.len()).filter(|&i| i != target_idx).collect()
    } else {
        desc.feature_columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Error::Schema(format!("feature column `{c}` not in header")))
            })
            .collect::<Result<_>>()?
    };

    let mut values = Vec::new();
    let mut raw_targets = Vec::new();
    let mut dropped = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("record {}: {e}", line + 1)))?;
        let target = record.get(target_idx).unwrap_or("").trim();
        if target.is_empty() {
            dropped += 1;
            continue;
        }
        raw_targets.push(target.to_string());
        values.extend(feature_idx.iter().map(|&i| parse_cell(record.get(i).unwrap_or(""))));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with an empty target", desc.name);
    }
    if raw_targets.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let label_names: Vec<String> = if desc.class_labels.is_empty() {
        let mut distinct: Vec<String> = raw_targets
            .iter()
            .cloned()
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        sort_label_values(&mut distinct);
        distinct
    } else {
        desc.class_labels.clone()
    };
    let labels = raw_targets
        .iter()
        .map(|t| {
            label_names.iter().position(|l| l == t).ok_or_else(|| {
                Error::Schema(format!("target value `{t}` not among declared class labels"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_rows = raw_targets.len();
    if n_rows != desc.expected_rows {
        log::warn!(
            "{}: expected {} rows, found {n_rows}",
            desc.name,
            desc.expected_rows
        );
    }
    if feature_idx.len() != desc.expected_feature_count {
        log::warn!(
            "{}: expected {} feature columns, found {}",
            desc.name,
            desc.expected_feature_count,
            feature_idx.len()
        );
    }
    let features = Array2::from_shape_vec((n_rows, feature_idx.len()), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    let names = feature_idx.iter().map(|&i| header[i].clone()).collect();
    Dataset::new(features, names, labels, label_names, desc.clone())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    #[default]
    Median,
    Mean,
    Mode,
}

fn column_statistic(observed: &mut [f64], strategy: ImputeStrategy) -> f64 {
    match strategy {
        ImputeStrategy::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
        ImputeStrategy::Median => {
            observed.sort_by(f64::total_cmp);
            let n = observed.len();
            if n % 2 == 1 {
                observed[n / 2]
            } else {
                0.5 * (observed[n / 2 - 1] + observed[n / 2])
            }
        }
        ImputeStrategy::Mode => {
            // most frequent value, smallest on ties
            observed.sort_by(f64::total_cmp);
            let mut best = (observed[0], 0usize);
            let mut i = 0;
            while i < observed.len() {
                let j = observed[i..].iter().take_while(|&&v| v == observed[i]).count();
                if j > best.1 {
                    best = (observed[i], j);
                }
                i += j;
            }
            best.0
        }
    }
}

/// Replaces each missing cell with its column's statistic over observed cells.
pub fn impute_missing(d: &Dataset, strategy: ImputeStrategy) -> Result<Dataset> {
    let mut out = d.clone();
    for (j, mut col) in out.features.axis_iter_mut(Axis(1)).enumerate() {
        if col.iter().all(|v| !v.is_nan()) {
            continue;
        }
        let mut observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::UnimputableColumn(d.feature_names[j].clone()));
        }
        let fill = column_statistic(&mut observed, strategy);
        col.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = fill);
    }
    Ok(out)
}

/// Keeps the first occurrence of each (feature vector, label) pair.
pub fn remove_duplicates(d: &Dataset) -> Dataset {
    let mut seen = HashSet::new();
    let keep: Vec<usize> = (0..d.n_rows())
        .filter(|&i| {
            let key: (Vec<u64>, usize) = (
                d.features.row(i).iter().map(|v| v.to_bits()).collect(),
                d.labels[i],
            );
            seen.insert(key)
        })
        .collect();
    if keep.len() < d.n_rows() {
        log::info!(
            "{}: removed {} duplicate rows",
            d.source.name,
            d.n_rows() - keep.len()
        );
    }
    d.select_rows(&keep)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class test counts: round-half-up, then a largest-remainder correction
/// so the total equals round(n * fraction).
pub(crate) fn allocate_test_counts(counts: &[usize], test_fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let target = round_half_up(n as f64 * test_fraction);
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * test_fraction).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|&q| round_half_up(q)).collect();
    let mut total: usize = alloc.iter().sum();
    // residual > 0: rounded down, residual < 0: rounded up
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let residual = |c: usize, alloc: &[usize]| quotas[c] - alloc[c] as f64;
    while total != target {
        if total < target {
            order.sort_by(|&a, &b| residual(b, &alloc).total_cmp(&residual(a, &alloc)).then(a.cmp(&b)));
            let c = *order
                .iter()
                .find(|&&c| alloc[c] < counts[c])
                .expect("target never exceeds row count");
            alloc[c] += 1;
            total += 1;
        } else {
            order.sort_by(|&a, &b| residual(a, &alloc).total_cmp(&residual(b, &alloc)).then(a.cmp(&b)));
            let c = *order.iter().find(|&&c| alloc[c] > 0).expect("total is positive");
            alloc[c] -= 1;
            total -= 1;
        }
    }
    alloc
}

/// Stratified train/test split with a seeded shuffle inside each class.
pub fn stratified_split(labels: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let counts = class_counts(labels, n_classes);
    if let Some(c) = counts.iter().position(|&n| n == 1) {
        return Err(Error::Stratification(format!(
            "class {c} has a single row and cannot be stratified"
        )));
    }
    let alloc = allocate_test_counts(&counts, test_fraction);
    let mut train_rows = Vec::with_capacity(labels.len());
    let mut test_rows = Vec::new();
    for (c, &n_test) in alloc.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng(derive_seed(seed, &[c as u64])));
        test_rows.extend_from_slice(&members[..n_test]);
        train_rows.extend_from_slice(&members[n_test..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitIndices {
        train_rows,
        test_rows,
        seed,
    })
}
