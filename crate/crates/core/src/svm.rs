//! Kernel SVM trained with sequential minimal optimization, Platt-calibrated,
//! with one-vs-rest multiclass reduction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, Recipe};
use crate::modelselect::stratified_kfold;
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Polynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Value(f64),
    #[serde(with = "scale_tag")]
    Scale,
}

mod scale_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("scale")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        match String::deserialize(d)?.as_str() {
            "scale" => Ok(()),
            other => Err(D::Error::custom(format!("unknown gamma `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: Gamma,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: Gamma::Scale,
            degree: 3,
            coef0: 0.0,
        }
    }

    pub fn rbf(gamma: Gamma) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            degree: 3,
            coef0: 0.0,
        }
    }

    /// Fixes a numeric gamma; `scale` becomes 1 / (d * var(X)) over all entries.
    pub fn resolve(&self, x: ArrayView2<f64>) -> Result<ResolvedKernel> {
        let gamma = match self.gamma {
            Gamma::Value(g) if g > 0.0 && g.is_finite() => g,
            Gamma::Value(g) => {
                return Err(Error::InvalidArgument(format!("kernel gamma must be positive, got {g}")))
            }
            Gamma::Scale => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    1.0 / (x.ncols() as f64 * var)
                } else {
                    1.0
                }
            }
        };
        Ok(ResolvedKernel {
            kind: self.kind,
            gamma,
            degree: self.degree,
            coef0: self.coef0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedKernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl ResolvedKernel {
    fn eval_unchecked(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self.kind {
            KernelKind::Linear => u.dot(&v),
            KernelKind::Rbf => {
                let d2: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Polynomial => (self.gamma * u.dot(&v) + self.coef0).powi(self.degree as i32),
        }
    }

    fn gram(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(x.row(i), x.row(j));
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        k
    }
}

pub fn kernel_eval(k: &ResolvedKernel, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("dimension {}", u.len()), v.len()));
    }
    Ok(k.eval_unchecked(u, v))
}

const TAU: f64 = 1e-12;

/// Dual solution over a subset of rows of a precomputed Gram matrix.
#[derive(Clone, Debug)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// SMO with second-order working-set selection. `gram` is indexed by the
/// entries of `rows`; `y` holds ±1 per entry of `rows`.
pub(crate) fn solve_dual(
    gram: ArrayView2<f64>,
    rows: &[usize],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> DualSolution {
    let n = rows.len();
    let q = |a: usize, b: usize| y[a] * y[b] * gram[[rows[a], rows[b]]];
    let qd: Vec<f64> = (0..n).map(|a| gram[[rows[a], rows[a]]]).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let is_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..n {
                if !is_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = qd[i] + qd[t] - 2.0 * y[i] * y[t] * q(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // bias from free multipliers, midpoint of the feasible interval otherwise
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        0.5 * (ub + lb)
    };
    DualSolution {
        alpha,
        rho,
        converged,
        iterations,
    }
}

/// Sigmoid p(y = +1 | f) = 1 / (1 + exp(a f + b)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattSigmoid {
    pub a: f64,
    pub b: f64,
    /// Set when calibration fell back to the default sigmoid.
    pub fallback: bool,
}

impl PlattSigmoid {
    pub const FALLBACK: PlattSigmoid = PlattSigmoid {
        a: -1.0,
        b: 0.0,
        fallback: true,
    };

    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            (-z).exp() / (1.0 + (-z).exp())
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Platt's smoothed targets for labels in {-1, +1}.
pub fn platt_targets(labels: &[f64]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&l| l > 0.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    labels.iter().map(|&l| if l > 0.0 { hi } else { lo }).collect()
}

/// Negative log-likelihood of the sigmoid against soft targets.
pub fn platt_objective(a: f64, b: f64, scores: &[f64], targets: &[f64]) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Gradient of [`platt_objective`] with respect to (a, b).
pub fn platt_gradient(a: f64, b: f64, scores: &[f64], targets: &[f64]) -> (f64, f64) {
    let sig = PlattSigmoid {
        a,
        b,
        fallback: false,
    };
    scores.iter().zip(targets).fold((0.0, 0.0), |(ga, gb), (&f, &t)| {
        let d = t - sig.probability(f);
        (ga + f * d, gb + d)
    })
}

/// Fits (a, b) by damped Newton iterations with backtracking.
pub fn platt_calibrate(scores: &[f64], labels: &[f64]) -> PlattSigmoid {
    let pos = labels.iter().filter(|&&l| l > 0.0).count();
    if pos == 0 || pos == labels.len() || scores.len() != labels.len() {
        return PlattSigmoid::FALLBACK;
    }
    let targets = platt_targets(labels);
    let neg = labels.len() - pos;
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-8);
    let mut a = 0.0;
    let mut b = ((neg as f64 + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = platt_objective(a, b, scores, &targets);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21) = (sigma, sigma, 0.0);
        let sig = PlattSigmoid {
            a,
            b,
            fallback: false,
        };
        for &f in scores {
            let p = sig.probability(f);
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
        }
        let (g1, g2) = platt_gradient(a, b, scores, &targets);
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_objective(na, nb, scores, &targets);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return PlattSigmoid::FALLBACK;
    }
    PlattSigmoid {
        a,
        b,
        fallback: false,
    }
}

/// One binary machine: f(x) = sum_i coef_i K(sv_i, x) + bias, with coef_i = alpha_i y_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Array2<f64>,
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub kernel: ResolvedKernel,
    pub platt: Option<PlattSigmoid>,
    /// False when SMO stopped on its iteration budget.
    pub converged: bool,
}

impl BinarySvm {
    fn from_dual(x: ArrayView2<f64>, rows: &[usize], y: &[f64], sol: &DualSolution, c: f64, kernel: ResolvedKernel) -> Self {
        let sv: Vec<usize> = (0..rows.len()).filter(|&t| sol.alpha[t] > 0.0).collect();
        let sv_rows: Vec<usize> = sv.iter().map(|&t| rows[t]).collect();
        BinarySvm {
            support_vectors: x.select(Axis(0), &sv_rows),
            dual_coef: sv.iter().map(|&t| sol.alpha[t] * y[t]).collect(),
            bias: -sol.rho,
            c,
            kernel,
            platt: None,
            converged: sol.converged,
        }
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.support_vectors
            .axis_iter(Axis(0))
            .zip(&self.dual_coef)
            .map(|(sv, &coef)| coef * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.support_vectors.ncols() {
            return Err(Error::shape(format!("{} columns", self.support_vectors.ncols()), x.ncols()));
        }
        Ok(x.axis_iter(Axis(0)).map(|row| self.decision(row)).collect())
    }

    /// Primal weight vector; only meaningful for the linear kernel.
    pub fn linear_weights(&self) -> Option<Array1<f64>> {
        (self.kernel.kind == KernelKind::Linear).then(|| {
            self.support_vectors
                .axis_iter(Axis(0))
                .zip(&self.dual_coef)
                .fold(Array1::zeros(self.support_vectors.ncols()), |acc, (sv, &coef)| acc + &sv * coef)
        })
    }

    pub fn probability(&self, f: f64) -> f64 {
        self.platt.unwrap_or(PlattSigmoid::FALLBACK).probability(f)
    }
}

pub(crate) fn default_iteration_budget(n: usize, max_passes: Option<usize>) -> usize {
    max_passes.unwrap_or(10 * n).saturating_mul(n).max(1000)
}

/// Trains one uncalibrated machine on labels in {-1, +1}.
pub fn smo_train_binary(
    x: ArrayView2<f64>,
    y: &[f64],
    c: f64,
    kernel: &KernelSpec,
    tol: f64,
    max_passes: Option<usize>,
) -> Result<BinarySvm> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} labels", x.nrows()), y.len()));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::InvalidArgument("binary SVM needs both labels present".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let kernel = kernel.resolve(x)?;
    let gram = kernel.gram(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let sol = solve_dual(gram.view(), &rows, y, c, tol, default_iteration_budget(rows.len(), max_passes));
    if !sol.converged {
        log::warn!("SMO stopped after {} iterations without meeting tol {tol}", sol.iterations);
    }
    Ok(BinarySvm::from_dual(x, &rows, y, &sol, c, kernel))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelSpec,
    pub tol: f64,
    pub max_passes: Option<usize>,
    pub calibration_folds: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: KernelSpec::rbf(Gamma::Scale),
            tol: 1e-3,
            max_passes: None,
            calibration_folds: 3,
        }
    }
}

/// One calibrated machine per class; a single machine (class 1 vs class 0)
/// when there are two classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    pub machines: Vec<BinarySvm>,
    pub n_classes: usize,
}

fn machine_targets(y: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    let positives: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    positives
        .into_iter()
        .map(|c| y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect())
        .collect()
}

/// Out-of-fold decision values for calibration; in-sample values when a class
/// is too small to fold.
fn oof_decisions(
    x: ArrayView2<f64>,
    gram: ArrayView2<f64>,
    y: &[f64],
    params: &SvmParams,
    full: &BinarySvm,
    seed: u64,
) -> Vec<f64> {
    let binary: Vec<usize> = y.iter().map(|&v| usize::from(v > 0.0)).collect();
    let minority = binary.iter().filter(|&&b| b == 1).count().min(binary.iter().filter(|&&b| b == 0).count());
    let folds = params.calibration_folds.min(minority);
    if folds < 2 {
        return x.axis_iter(Axis(0)).map(|r| full.decision(r)).collect();
    }
    let plan = stratified_kfold(&binary, 2, folds, seed).expect("fold count bounded by minority class");
    let mut out = vec![0.0; y.len()];
    for fold in &plan.folds {
        let y_tr: Vec<f64> = fold.train.iter().map(|&i| y[i]).collect();
        let sol = solve_dual(
            gram,
            &fold.train,
            &y_tr,
            params.c,
            params.tol,
            default_iteration_budget(fold.train.len(), params.max_passes),
        );
        let sv: Vec<(usize, f64)> = fold
            .train
            .iter()
            .enumerate()
            .filter(|(t, _)| sol.alpha[*t] > 0.0)
            .map(|(t, &row)| (row, sol.alpha[t] * y_tr[t]))
            .collect();
        for &v in &fold.validation {
            out[v] = sv.iter().map(|&(row, coef)| coef * gram[[row, v]]).sum::<f64>() - sol.rho;
        }
    }
    out
}

pub fn fit_svm_multiclass(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    params: &SvmParams,
    seed: u64,
) -> Result<MulticlassSvm> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("SVM needs at least two classes".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} labels", x.nrows()), y.len()));
    }
    let kernel = params.kernel.resolve(x)?;
    let gram = kernel.gram(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut machines = Vec::new();
    for (m, target) in machine_targets(y, n_classes).iter().enumerate() {
        if !(target.iter().any(|&v| v > 0.0) && target.iter().any(|&v| v < 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "one-vs-rest machine {m} lacks one of its labels in the training rows"
            )));
        }
        let sol = solve_dual(
            gram.view(),
            &rows,
            target,
            params.c,
            params.tol,
            default_iteration_budget(rows.len(), params.max_passes),
        );
        let mut machine = BinarySvm::from_dual(x, &rows, target, &sol, params.c, kernel);
        let scores = oof_decisions(x, gram.view(), target, params, &machine, derive_seed(seed, &[m as u64]));
        machine.platt = Some(platt_calibrate(&scores, target));
        machines.push(machine);
    }
    Ok(MulticlassSvm {
        machines,
        n_classes,
    })
}

impl MulticlassSvm {
    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.machines.len()));
        for (m, machine) in self.machines.iter().enumerate() {
            let f = machine.decision_function(x)?;
            out.column_mut(m).assign(&Array1::from(f));
        }
        Ok(out)
    }
}

impl Classifier for MulticlassSvm {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let f = self.decision_function(x)?;
        let mut p = Array2::zeros((x.nrows(), self.n_classes));
        for (i, row) in f.axis_iter(Axis(0)).enumerate() {
            if self.n_classes == 2 {
                let s = self.machines[0].probability(row[0]);
                p[[i, 0]] = 1.0 - s;
                p[[i, 1]] = s;
            } else {
                let s: Vec<f64> = row.iter().zip(&self.machines).map(|(&v, m)| m.probability(v)).collect();
                let z: f64 = s.iter().sum();
                for (c, v) in s.into_iter().enumerate() {
                    p[[i, c]] = if z > 0.0 { v / z } else { 1.0 / self.n_classes as f64 };
                }
            }
        }
        Ok(p)
    }
}

impl Recipe for SvmParams {
    type Model = MulticlassSvm;

    fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Result<MulticlassSvm> {
        fit_svm_multiclass(x, y, n_classes, self, seed)
    }
}

/// Uncalibrated one-vs-rest linear machines, labels by argmax decision value.
/// Used for feature scoring where probabilities are not needed.
#[derive(Clone, Debug)]
pub struct LinearOvr {
    pub machines: Vec<BinarySvm>,
    pub n_classes: usize,
}

impl LinearOvr {
    pub fn fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, c: f64) -> Result<Self> {
        let kernel = KernelSpec::linear().resolve(x)?;
        let gram = kernel.gram(x);
        let rows: Vec<usize> = (0..x.nrows()).collect();
        let machines = machine_targets(y, n_classes)
            .iter()
            .map(|target| {
                if !(target.iter().any(|&v| v > 0.0) && target.iter().any(|&v| v < 0.0)) {
                    return Err(Error::InvalidArgument("linear SVM needs both labels per machine".into()));
                }
                let sol = solve_dual(gram.view(), &rows, target, c, 1e-3, default_iteration_budget(rows.len(), None));
                Ok(BinarySvm::from_dual(x, &rows, target, &sol, c, kernel))
            })
            .collect::<Result<_>>()?;
        Ok(LinearOvr { machines, n_classes })
    }

    /// Sum over machines of squared primal weights, per feature.
    pub fn feature_importance(&self) -> Array1<f64> {
        self.machines
            .iter()
            .map(|m| m.linear_weights().expect("linear kernel").mapv(|w| w * w))
            .fold(Array1::zeros(self.machines[0].support_vectors.ncols()), |acc, w| acc + w)
    }

    pub fn weights(&self) -> Vec<Array1<f64>> {
        self.machines.iter().map(|m| m.linear_weights().expect("linear kernel")).collect()
    }
}

impl Classifier for LinearOvr {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        // one-hot on the winning decision value
        let mut p = Array2::zeros((x.nrows(), self.n_classes));
        let weights = self.weights();
        let ncols = weights[0].len();
        if x.ncols() != ncols {
            return Err(Error::shape(format!("{ncols} columns"), x.ncols()));
        }
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let f: Vec<f64> = weights.iter().zip(&self.machines).map(|(w, m)| w.dot(&row) + m.bias).collect();
            let label = if self.n_classes == 2 {
                usize::from(f[0] > 0.0)
            } else {
                crate::model::argmax(f)
            };
            p[[i, label]] = 1.0;
        }
        Ok(p)
    }
}

/// Recipe for [`LinearOvr`] with a fixed C.
#[derive(Clone, Copy, Debug)]
pub struct LinearOvrRecipe {
    pub c: f64,
}

impl Recipe for LinearOvrRecipe {
    type Model = LinearOvr;

    fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize, _seed: u64) -> Result<LinearOvr> {
        LinearOvr::fit(x, y, n_classes, self.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn kkt_residual(m: &BinarySvm, x: ArrayView2<f64>, y: &[f64]) -> f64 {
        // independent check: recompute alphas from support vectors by row match
        x.axis_iter(Axis(0))
            .zip(y)
            .map(|(row, &yi)| {
                let margin = yi * m.decision(row);
                let alpha = m
                    .support_vectors
                    .axis_iter(Axis(0))
                    .zip(&m.dual_coef)
                    .find(|(sv, _)| *sv == row)
                    .map_or(0.0, |(_, &c)| c.abs());
                if alpha <= 0.0 {
                    (1.0 - margin).max(0.0)
                } else if alpha >= m.c {
                    (margin - 1.0).max(0.0)
                } else {
                    (margin - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn kernel_examples() {
        let rbf = KernelSpec::rbf(Gamma::Value(0.5)).resolve(array![[0.0]].view()).unwrap();
        let u = array![1.0, 2.0];
        assert_eq!(kernel_eval(&rbf, u.view(), u.view()).unwrap(), 1.0);
        let v = array![2.0, 3.0];
        assert!((kernel_eval(&rbf, u.view(), v.view()).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let lin = KernelSpec::linear().resolve(array![[0.0]].view()).unwrap();
        assert_eq!(kernel_eval(&lin, u.view(), array![3.0, 4.0].view()).unwrap(), 11.0);
        assert!(kernel_eval(&lin, u.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn gamma_serde_accepts_scale_and_numbers() {
        let g: Gamma = serde_json::from_str("\"scale\"").unwrap();
        assert_eq!(g, Gamma::Scale);
        let g: Gamma = serde_json::from_str("0.1").unwrap();
        assert_eq!(g, Gamma::Value(0.1));
        assert!(serde_json::from_str::<Gamma>("\"auto\"").is_err());
    }

    #[test]
    fn two_point_analytic_solution() {
        let x = array![[-1.0], [1.0]];
        let m = smo_train_binary(x.view(), &[-1.0, 1.0], 10.0, &KernelSpec::linear(), 1e-3, None).unwrap();
        assert_eq!(m.dual_coef.len(), 2);
        assert!((m.dual_coef[0] + 0.5).abs() < 1e-9 && (m.dual_coef[1] - 0.5).abs() < 1e-9);
        assert!(m.bias.abs() < 1e-9);
        for t in [-2.0, 0.3, 5.0] {
            assert!((m.decision(array![t].view()) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn one_class_is_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(smo_train_binary(x.view(), &[1.0, 1.0], 1.0, &KernelSpec::linear(), 1e-3, None).is_err());
    }

    #[test]
    fn separable_blobs_fit_with_small_kkt_residuals() {
        let x = array![[0.0, 0.0], [0.2, 0.5], [0.4, 0.1], [2.0, 2.0], [2.5, 1.8], [1.9, 2.6]];
        let y = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        for kernel in [KernelSpec::linear(), KernelSpec::rbf(Gamma::Value(0.5))] {
            let m = smo_train_binary(x.view(), &y, 10.0, &kernel, 1e-3, None).unwrap();
            assert!(m.converged);
            let pred = m.decision_function(x.view()).unwrap();
            assert!(pred.iter().zip(&y).all(|(f, t)| f * t > 0.0));
            assert!(kkt_residual(&m, x.view(), &y) <= 1e-3);
            assert!(m.dual_coef.iter().sum::<f64>().abs() <= 1e-8);
            assert!(m.dual_coef.iter().all(|c| c.abs() <= 10.0 + 1e-12));
        }
    }

    #[test]
    fn platt_symmetric_scores_give_half_at_zero() {
        let scores = [-2.0, -1.0, 1.0, 2.0];
        let labels = [-1.0, -1.0, 1.0, 1.0];
        let s = platt_calibrate(&scores, &labels);
        assert!((s.probability(0.0) - 0.5).abs() < 1e-6);
        assert!(s.a < 0.0);
    }

    #[test]
    fn platt_monotone_and_separated() {
        let s = platt_calibrate(&[-1.0, 1.0], &[-1.0, 1.0]);
        assert!(s.a < 0.0 && s.probability(1.0) > s.probability(-1.0));

        let scores: Vec<f64> = (0..200).map(|i| if i < 100 { -3.0 - i as f64 * 0.01 } else { 3.0 + i as f64 * 0.01 }).collect();
        let labels: Vec<f64> = (0..200).map(|i| if i < 100 { -1.0 } else { 1.0 }).collect();
        let s = platt_calibrate(&scores, &labels);
        assert!(s.a < -1.0, "a = {}", s.a);
        let loss: f64 = scores
            .iter()
            .zip(&labels)
            .map(|(&f, &l)| {
                let p = s.probability(f);
                -if l > 0.0 { p.ln() } else { (1.0 - p).ln() }
            })
            .sum::<f64>()
            / 200.0;
        assert!(loss < 0.05, "loss {loss}");
    }

    #[test]
    fn platt_degenerate_falls_back() {
        let s = platt_calibrate(&[1.0, 2.0], &[1.0, 1.0]);
        assert_eq!(s, PlattSigmoid::FALLBACK);
    }

    #[test]
    fn binary_multiclass_uses_single_machine() {
        let x = array![[0.0], [0.1], [0.2], [0.3], [0.35], [0.9], [1.0], [1.1], [1.2], [1.3]];
        let y = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let m = fit_svm_multiclass(x.view(), &y, 2, &SvmParams::default(), 1).unwrap();
        assert_eq!(m.machines.len(), 1);
        let p = m.predict_proba(x.view()).unwrap();
        let f = m.machines[0].decision_function(x.view()).unwrap();
        for (row, fv) in p.axis_iter(Axis(0)).zip(f) {
            assert!((row[1] - m.machines[0].probability(fv)).abs() < 1e-15);
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.predict(x.view()).unwrap(), y);
    }

    #[test]
    fn linear_weights_match_direction() {
        let x = array![[-1.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [1.0, 1.0]];
        let y = [0, 1, 0, 1];
        let m = LinearOvr::fit(x.view(), &y, 2, 1.0).unwrap();
        let imp = m.feature_importance();
        assert!(imp[0] > 0.5 && imp[1] < 1e-9);
        assert_eq!(m.predict(x.view()).unwrap(), y);
    }
}
