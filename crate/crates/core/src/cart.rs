//! Decision trees grown by exhaustive best-split search over presorted
//! feature columns. Classification trees use Gini impurity; the same growth
//! engine drives the regression trees of the boosting models.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Classifier};
use crate::seed::{rng, Rng};

/// How many features each node may consider.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    All,
    Sqrt,
    Log2,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            FeatureSubsample::All => n_features,
            FeatureSubsample::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeatureSubsample::Log2 => (n_features as f64).log2().floor() as usize,
            FeatureSubsample::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            feature_subsample: FeatureSubsample::All,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class proportions for classification trees, a single value for
    /// regression trees.
    Leaf { value: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl DecisionTree {
    pub fn leaf_value(&self, row: ArrayView1<f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] < *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn internal_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    fn check_width(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!("{} columns", self.n_features), x.ncols()));
        }
        Ok(())
    }

    /// Raw leaf values (regression trees: one column).
    pub fn predict_values(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(x.axis_iter(Axis(0)).map(|r| self.leaf_value(r)[0]).collect())
    }
}

pub fn gini_impurity(weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidArgument("Gini impurity needs non-negative weights with a positive sum".into()));
    }
    Ok(gini_unchecked(weights, total))
}

fn gini_unchecked(weights: &[f64], total: f64) -> f64 {
    1.0 - weights.iter().map(|&w| (w / total) * (w / total)).sum::<f64>()
}

/// Accumulated node statistics and the split/leaf rules of one tree kind.
pub(crate) trait Criterion {
    type Stats: Clone;

    fn zero(&self) -> Self::Stats;
    fn add(&self, s: &mut Self::Stats, row: usize);
    fn difference(&self, whole: &Self::Stats, part: &Self::Stats) -> Self::Stats;
    /// No split can improve this node.
    fn is_terminal(&self, s: &Self::Stats) -> bool;
    /// Split score, or `None` when the split is inadmissible. Only strictly
    /// positive scores are accepted.
    fn gain(&self, parent: &Self::Stats, left: &Self::Stats, right: &Self::Stats) -> Option<f64>;
    fn leaf(&self, s: &Self::Stats) -> Vec<f64>;
    /// Whether an impure node may take a zero-gain split when nothing better
    /// exists (needed to separate XOR-like structure greedily).
    fn accepts_zero_gain(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ClassStats {
    weights: Vec<f64>,
    total: f64,
    count: usize,
}

pub(crate) struct Gini<'a> {
    pub y: &'a [usize],
    pub w: &'a [f64],
    pub n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Stats = ClassStats;

    fn zero(&self) -> ClassStats {
        ClassStats {
            weights: vec![0.0; self.n_classes],
            total: 0.0,
            count: 0,
        }
    }

    fn add(&self, s: &mut ClassStats, row: usize) {
        s.weights[self.y[row]] += self.w[row];
        s.total += self.w[row];
        s.count += 1;
    }

    fn difference(&self, whole: &ClassStats, part: &ClassStats) -> ClassStats {
        let weights: Vec<f64> = whole.weights.iter().zip(&part.weights).map(|(a, b)| (a - b).max(0.0)).collect();
        ClassStats {
            total: weights.iter().sum(),
            weights,
            count: whole.count - part.count,
        }
    }

    fn is_terminal(&self, s: &ClassStats) -> bool {
        s.weights.iter().filter(|&&w| w > 0.0).count() <= 1
    }

    fn gain(&self, parent: &ClassStats, left: &ClassStats, right: &ClassStats) -> Option<f64> {
        if !(left.total > 0.0 && right.total > 0.0) {
            return None;
        }
        let children = (left.total * gini_unchecked(&left.weights, left.total)
            + right.total * gini_unchecked(&right.weights, right.total))
            / parent.total;
        Some(gini_unchecked(&parent.weights, parent.total) - children)
    }

    fn leaf(&self, s: &ClassStats) -> Vec<f64> {
        s.weights.iter().map(|w| w / s.total).collect()
    }

    fn accepts_zero_gain(&self) -> bool {
        true
    }
}

/// Minimum improvement for a candidate split to displace the incumbent; keeps
/// tie-breaks stable against rounding in the accumulated statistics.
pub(crate) const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t <= a {
        b
    } else {
        t
    }
}

/// Scans presorted rows of each candidate feature for the best threshold.
fn scan_node<C: Criterion>(
    x: ArrayView2<f64>,
    sorted: &[Vec<usize>],
    range: (usize, usize),
    candidates: &[usize],
    crit: &C,
    parent: &C::Stats,
    min_leaf: usize,
    allow_zero: bool,
) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    let floor = if allow_zero { -TIE_EPS } else { TIE_EPS };
    for &f in candidates {
        let rows = &sorted[f][range.0..range.1];
        let mut left = crit.zero();
        for k in 0..rows.len() - 1 {
            crit.add(&mut left, rows[k]);
            let (a, b) = (x[[rows[k], f]], x[[rows[k + 1], f]]);
            if a >= b {
                continue;
            }
            let n_left = k + 1;
            if n_left < min_leaf || rows.len() - n_left < min_leaf {
                continue;
            }
            let right = crit.difference(parent, &left);
            let Some(gain) = crit.gain(parent, &left, &right) else {
                continue;
            };
            let beats = match best {
                None => gain > floor,
                Some(b) => gain > b.gain + TIE_EPS * b.gain.abs().max(1.0),
            };
            if beats {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(a, b),
                    gain,
                });
            }
        }
    }
    best
}

pub(crate) struct Limits {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: usize,
}

struct Grower<'a, 'x, C: Criterion> {
    x: ArrayView2<'x, f64>,
    crit: &'a C,
    limits: &'a Limits,
    sorted: Vec<Vec<usize>>,
    scratch: Vec<usize>,
    goes_left: Vec<bool>,
    rng: Option<Rng>,
    nodes: Vec<Node>,
}

impl<C: Criterion> Grower<'_, '_, C> {
    fn grow(&mut self, range: (usize, usize), depth: usize) -> usize {
        let mut stats = self.crit.zero();
        for &r in &self.sorted[0][range.0..range.1] {
            self.crit.add(&mut stats, r);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.crit.leaf(&stats),
        });
        let n = range.1 - range.0;
        let depth_ok = self.limits.max_depth.map_or(true, |m| depth < m);
        if !depth_ok || n < self.limits.min_samples_split || n < 2 * self.limits.min_samples_leaf || self.crit.is_terminal(&stats) {
            return id;
        }
        let d = self.x.ncols();
        let candidates: Vec<usize> = match self.rng.as_mut() {
            Some(rng) if self.limits.max_features < d => {
                let mut c = sample(rng, d, self.limits.max_features).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..d).collect(),
        };
        let Some(split) = scan_node(self.x, &self.sorted, range, &candidates, self.crit, &stats, self.limits.min_samples_leaf, self.crit.accepts_zero_gain()) else {
            return id;
        };

        for &r in &self.sorted[split.feature][range.0..range.1] {
            self.goes_left[r] = self.x[[r, split.feature]] < split.threshold;
        }
        let mut n_left = 0;
        for f in 0..d {
            let list = &mut self.sorted[f][range.0..range.1];
            self.scratch.clear();
            let mut write = 0;
            for i in 0..list.len() {
                let r = list[i];
                if self.goes_left[r] {
                    list[write] = r;
                    write += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            list[write..].copy_from_slice(&self.scratch);
            n_left = write;
        }
        let mid = range.0 + n_left;
        let left = self.grow((range.0, mid), depth + 1);
        let right = self.grow((mid, range.1), depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree over `rows` (which must be non-empty). Features are
/// subsampled per node with `rng` when `max_features` is below the column count.
pub(crate) fn grow_tree<C: Criterion>(x: ArrayView2<f64>, rows: &[usize], crit: &C, limits: &Limits, rng: Option<Rng>) -> Vec<Node> {
    let sorted: Vec<Vec<usize>> = (0..x.ncols().max(1))
        .map(|f| {
            let mut r = rows.to_vec();
            if f < x.ncols() {
                r.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            }
            r
        })
        .collect();
    let mut grower = Grower {
        x,
        crit,
        limits,
        sorted,
        scratch: Vec::with_capacity(rows.len()),
        goes_left: vec![false; x.nrows()],
        rng,
        nodes: Vec::new(),
    };
    grower.grow((0, rows.len()), 0);
    grower.nodes
}

fn check_inputs(x: ArrayView2<f64>, y: &[usize], w: &[f64], n_classes: usize) -> Result<Vec<usize>> {
    if x.nrows() != y.len() || y.len() != w.len() {
        return Err(Error::shape(format!("{} labels and weights", x.nrows()), format!("{} / {}", y.len(), w.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{n_classes}")));
    }
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("sample weights must be finite and non-negative".into()));
    }
    let rows: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("sample weights sum to zero".into()));
    }
    Ok(rows)
}

/// Best Gini split of all positively weighted rows over the candidate features.
pub fn best_split(x: ArrayView2<f64>, y: &[usize], w: &[f64], n_classes: usize, candidates: &[usize]) -> Result<Option<SplitChoice>> {
    let rows = check_inputs(x, y, w, n_classes)?;
    let crit = Gini { y, w, n_classes };
    let mut parent = crit.zero();
    for &r in &rows {
        crit.add(&mut parent, r);
    }
    if rows.len() < 2 {
        return Ok(None);
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let sorted: Vec<Vec<usize>> = (0..x.ncols())
        .map(|f| {
            let mut r = rows.clone();
            r.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            r
        })
        .collect();
    Ok(scan_node(x, &sorted, (0, rows.len()), &cands, &crit, &parent, 1, false))
}

pub fn fit_tree(x: ArrayView2<f64>, y: &[usize], w: &[f64], n_classes: usize, p: &TreeParams) -> Result<DecisionTree> {
    let rows = check_inputs(x, y, w, n_classes)?;
    if p.min_samples_split < 2 || p.min_samples_leaf < 1 {
        return Err(Error::InvalidArgument("min_samples_split >= 2 and min_samples_leaf >= 1 required".into()));
    }
    let limits = Limits {
        max_depth: p.max_depth,
        min_samples_split: p.min_samples_split,
        min_samples_leaf: p.min_samples_leaf,
        max_features: p.feature_subsample.resolve(x.ncols()),
    };
    let crit = Gini { y, w, n_classes };
    let nodes = grow_tree(x, &rows, &crit, &limits, Some(rng(p.seed)));
    Ok(DecisionTree {
        nodes,
        n_features: x.ncols(),
        n_classes,
    })
}

/// Labels and class probabilities (leaf proportions) for each row.
pub fn predict_tree(t: &DecisionTree, x: ArrayView2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
    let p = t.predict_proba(x)?;
    let labels = crate::model::argmax_rows(&p);
    Ok((labels, p))
}

impl Classifier for DecisionTree {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let mut p = Array2::zeros((x.nrows(), self.n_classes));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            p.row_mut(i).assign(&ArrayView1::from(self.leaf_value(row)));
        }
        Ok(p)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.check_width(x)?;
        Ok(x.axis_iter(Axis(0)).map(|r| argmax(self.leaf_value(r).iter().copied())).collect())
    }
}
