//! Min-max scaling to [0, 1].

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
    pub fitted_on: usize,
}

pub fn fit_minmax(x: ArrayView2<f64>) -> Result<ScalerParams> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot fit a scaler on zero rows".into()));
    }
    let (min, range) = x
        .axis_iter(Axis(1))
        .map(|col| {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        })
        .unzip();
    Ok(ScalerParams {
        min,
        range,
        fitted_on: x.ncols(),
    })
}

/// Scales with fitted params. Zero-range columns map to 0 and values outside
/// the fitted range are clamped.
pub fn apply_minmax(x: ArrayView2<f64>, p: &ScalerParams) -> Result<Array2<f64>> {
    if x.ncols() != p.fitted_on {
        return Err(Error::shape(format!("{} columns", p.fitted_on), x.ncols()));
    }
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if p.range[j] > 0.0 {
                ((*v - p.min[j]) / p.range[j]).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn fits_min_and_range() {
        let p = fit_minmax(array![[2.0], [4.0], [6.0]].view()).unwrap();
        assert_eq!((p.min[0], p.range[0]), (2.0, 4.0));
        let p = fit_minmax(array![[3.0], [3.0], [3.0]].view()).unwrap();
        assert_eq!((p.min[0], p.range[0]), (3.0, 0.0));
        let p = fit_minmax(array![[0.0, 5.0], [10.0, 5.0]].view()).unwrap();
        assert_eq!(p.min, vec![0.0, 5.0]);
        assert_eq!(p.range, vec![10.0, 0.0]);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(fit_minmax(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn applies_with_zero_range_and_clamping() {
        let p = ScalerParams {
            min: vec![2.0, 7.0],
            range: vec![4.0, 0.0],
            fitted_on: 2,
        };
        let out = apply_minmax(array![[4.0, 100.0], [8.0, -3.0], [-1.0, 7.0]].view(), &p).unwrap();
        assert_eq!(out, array![[0.5, 0.0], [1.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn column_mismatch_is_shape_error() {
        let p = fit_minmax(array![[1.0, 2.0]].view()).unwrap();
        assert!(matches!(
            apply_minmax(array![[1.0]].view(), &p),
            Err(Error::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn fitted_output_spans_unit_interval(vals in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let x = Array2::from_shape_vec((4, 3), vals).unwrap();
            let p = fit_minmax(x.view()).unwrap();
            let s = apply_minmax(x.view(), &p).unwrap();
            for (j, col) in s.axis_iter(Axis(1)).enumerate() {
                prop_assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
                if p.range[j] > 0.0 {
                    prop_assert!(col.iter().any(|&v| v == 0.0));
                    prop_assert!(col.iter().any(|&v| v == 1.0));
                }
            }
            let again = apply_minmax(s.view(), &fit_minmax(s.view()).unwrap()).unwrap();
            for (a, b) in again.iter().zip(s.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
