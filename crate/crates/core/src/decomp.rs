//! Principal component analysis with variance-target component selection.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    /// All principal axes as rows, ordered by decreasing eigenvalue.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub retained: usize,
    pub variance_target: f64,
}

pub fn fit_pca(x: ArrayView2<f64>, variance_target: f64) -> Result<PcaModel> {
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance target {variance_target} outside (0, 1]")));
    }
    let means = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &means;
    let cov = centered.t().dot(&centered) / (x.nrows() - 1) as f64;
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let total: f64 = eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("zero total variance".into()));
    }
    let explained_variance_ratio: Vec<f64> = eigenvalues.iter().map(|&v| v.max(0.0) / total).collect();

    let mut components = vectors.t().to_owned();
    for mut row in components.axis_iter_mut(Axis(0)) {
        let lead = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if lead.1 < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }

    let mut cumulative = 0.0;
    let mut retained = explained_variance_ratio.len();
    for (m, r) in explained_variance_ratio.iter().enumerate() {
        cumulative += r;
        if cumulative >= variance_target - 1e-12 {
            retained = m + 1;
            break;
        }
    }
    Ok(PcaModel {
        means: means.to_vec(),
        components,
        eigenvalues,
        explained_variance_ratio,
        retained: retained.max(1),
        variance_target,
    })
}

impl PcaModel {
    /// Projects onto the first `m` components.
    pub fn project(&self, x: ArrayView2<f64>, m: usize) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::shape(format!("{} columns", self.means.len()), x.ncols()));
        }
        let centered = &x - &Array1::from(self.means.clone());
        Ok(centered.dot(&self.components.slice(ndarray::s![..m, ..]).t()))
    }

    pub fn reconstruct(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        let m = scores.ncols();
        scores.dot(&self.components.slice(ndarray::s![..m, ..])) + &Array1::from(self.means.clone())
    }
}

pub fn apply_pca(x: ArrayView2<f64>, m: &PcaModel) -> Result<Array2<f64>> {
    m.project(x, m.retained)
}
