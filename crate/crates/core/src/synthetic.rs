//! Seeded synthetic classification data for tests and smoke runs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataio::{Dataset, DatasetDescriptor};
use crate::error::{Error, Result};
use crate::seed::rng;

/// Gaussian classes whose first `n_classes` features carry a one-hot centroid
/// of height `separation`; the other features are pure noise with unit
/// deviation. Rows cycle through the classes so every class is balanced.
pub fn blobs(n: usize, n_features: usize, n_classes: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let x = Array2::from_shape_fn((n, n_features), |(i, j)| {
        let centre = if j == y[i] { separation } else { 0.0 };
        centre + normal.sample(&mut r)
    });
    (x, y)
}

/// Four classes at the corners of a square in features 0 and 1 (class bit 0
/// picks the sign of feature 0, bit 1 the sign of feature 1), followed by
/// `n_noise` uniform noise features. Informative coordinates are jittered by
/// `jitter` so the classes stay separable for jitter < 1.
pub fn square_corners(n: usize, n_noise: usize, jitter: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let y: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let mut x = Array2::zeros((n, 2 + n_noise));
    for i in 0..n {
        for b in 0..2 {
            let sign = if y[i] >> b & 1 == 1 { 1.0 } else { -1.0 };
            x[[i, b]] = sign + r.gen_range(-jitter..=jitter);
        }
        for j in 0..n_noise {
            x[[i, 2 + j]] = r.gen_range(-1.0..=1.0);
        }
    }
    (x, y)
}

/// Synthetic stand-in for a survey file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
    /// Fraction of cells blanked to NaN after generation.
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_rows: 600,
            n_features: 10,
            n_classes: 3,
            separation: 5.0,
            missing_fraction: 0.0,
            seed: 0,
        }
    }
}

pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let (mut x, y) = blobs(spec.n_rows, spec.n_features, spec.n_classes, spec.separation, spec.seed);
    if spec.missing_fraction > 0.0 {
        let mut r = rng(spec.seed ^ 0x5eed);
        let mut cells: Vec<(usize, usize)> = (0..spec.n_rows).flat_map(|i| (0..spec.n_features).map(move |j| (i, j))).collect();
        cells.shuffle(&mut r);
        let k = (cells.len() as f64 * spec.missing_fraction).round() as usize;
        for &(i, j) in &cells[..k] {
            x[[i, j]] = f64::NAN;
        }
    }
    Dataset::new(
        x,
        (0..spec.n_features).map(|j| format!("f{j}")).collect(),
        y,
        (0..spec.n_classes).map(|c| c.to_string()).collect(),
        synthetic_descriptor(spec),
    )
}

pub fn synthetic_descriptor(spec: &SyntheticSpec) -> DatasetDescriptor {
    DatasetDescriptor {
        name: "synthetic".into(),
        expected_rows: spec.n_rows,
        expected_feature_count: spec.n_features,
        target_column: "label".into(),
        feature_columns: Vec::new(),
        class_labels: Vec::new(),
        comparison_set: None,
    }
}

/// Writes the dataset as CSV with a trailing `label` column; NaN cells are blank.
pub fn write_csv<W: std::io::Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let mut header = d.feature_names.clone();
    header.push("label".into());
    w.write_record(&header).map_err(fmt)?;
    for (row, &label) in d.features.rows().into_iter().zip(&d.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }).collect();
        rec.push(d.label_names[label].clone());
        w.write_record(&rec).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}
