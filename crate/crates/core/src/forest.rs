//! Regression trees and the two ensembles built from them: bootstrap-bagged
//! random forests and shrinkage-based gradient boosting.
//!
//! Trees consume raw feature vectors; labels are whatever the caller passes
//! (the estimator wrappers use the standardized log-selectivity).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{selectivity_to_cardinality, Estimator};
use crate::featurize::{encode_flat, EncodingSpec, LabelTransform};
use crate::seed;
use crate::workload::Query;

pub const FORMAT_VERSION: u32 = 1;

/// Gains within this (relative) distance of the incumbent count as ties.
const GAIN_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` considers all of them.
    pub feature_subsample: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: None, min_samples_leaf: 1, feature_subsample: None }
    }
}

impl TreeParams {
    /// ⌈√width⌉ features per node, the forest default.
    pub fn forest(width: usize, max_depth: Option<usize>) -> Self {
        TreeParams {
            max_depth,
            min_samples_leaf: 1,
            feature_subsample: Some(((width as f64).sqrt().ceil() as usize).max(1)),
        }
    }
}

/// Nodes live in an arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub width: usize,
    pub nodes: Vec<Node>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { expected: x.len(), got: y.len() });
    }
    let width = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != width) {
        return Err(Error::ShapeMismatch { expected: width, got: bad.len() });
    }
    Ok(width)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Rows in the left child.
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Best SSE-reducing split of `rows` on `feature`, if any threshold keeps
/// both children at least `min_leaf` rows.
fn best_on_feature(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    parent_sse: f64,
) -> Option<(f64, f64)> {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
    let n = sorted.len();
    let total: f64 = sorted.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = sorted.iter().map(|&i| y[i] * y[i]).sum();
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let v = y[sorted[k]];
        sum += v;
        sq += v * v;
        let (a, b) = (x[sorted[k]][feature], x[sorted[k + 1]][feature]);
        let nl = k + 1;
        let nr = n - nl;
        if a == b || nl < min_leaf || nr < min_leaf {
            continue;
        }
        let sse_l = (sq - sum * sum / nl as f64).max(0.0);
        let (rs, rq) = (total - sum, total_sq - sq);
        let sse_r = (rq - rs * rs / nr as f64).max(0.0);
        let gain = parent_sse - sse_l - sse_r;
        let threshold = a + (b - a) / 2.0;
        let better = match best {
            None => true,
            Some((g, _)) => gain > g + GAIN_TIE * g.abs().max(1.0),
        };
        if better {
            best = Some((gain, threshold));
        }
    }
    best
}

fn sse(y: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    (mean, rows.iter().map(|&i| (y[i] - mean).powi(2)).sum())
}

fn best_split<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    width: usize,
    parent_sse: f64,
    rng: &mut R,
) -> Option<Candidate> {
    let mut drawn: Vec<usize> = match params.feature_subsample {
        Some(m) if m < width => sample(rng, width, m).into_vec(),
        _ => (0..width).collect(),
    };
    drawn.sort_unstable();
    let search = |features: &[usize]| {
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in features {
            if let Some((gain, t)) = best_on_feature(x, y, rows, f, params.min_samples_leaf.max(1), parent_sse) {
                let better = match best {
                    None => true,
                    Some((_, g, _)) => gain > g + GAIN_TIE * g.abs().max(1.0),
                };
                if better {
                    best = Some((f, gain, t));
                }
            }
        }
        best
    };
    let mut found = search(&drawn);
    if found.is_none() && drawn.len() < width {
        let rest: Vec<usize> = (0..width).filter(|f| drawn.binary_search(f).is_err()).collect();
        found = search(&rest);
    }
    let (feature, gain, threshold) = found?;
    let (left, right) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
    Some(Candidate { feature, threshold, gain, left, right })
}

/// Greedy SSE-reduction tree. A node becomes a leaf when it is pure, hits the
/// depth limit, or admits no threshold respecting `min_samples_leaf`. A
/// zero-gain split of an impure node is still taken so that distinct inputs
/// can always be separated.
pub fn fit_tree(x: &[Vec<f64>], y: &[f64], params: &TreeParams, seed: u64) -> Result<RegressionTree> {
    let width = check_data(x, y)?;
    let rows: Vec<usize> = (0..x.len()).collect();
    fit_rows(x, y, rows, params, width, seed)
}

fn fit_rows(
    x: &[Vec<f64>],
    y: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    width: usize,
    seed: u64,
) -> Result<RegressionTree> {
    let mut rng = seed::rng_for(seed, &[seed::tag("features")]);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stack = vec![(0usize, rows, 0usize)];
    while let Some((slot, rows, depth)) = stack.pop() {
        let (mean, node_sse) = sse(y, &rows);
        let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
        let capped = params.max_depth.is_some_and(|d| depth >= d);
        let split = if pure || capped || rows.len() < 2 * params.min_samples_leaf.max(1) {
            None
        } else {
            best_split(x, y, &rows, params, width, node_sse, &mut rng)
        };
        match split {
            None => nodes[slot] = Node::Leaf { value: mean },
            Some(c) => {
                debug_assert!(c.gain >= -1e-9 * node_sse.max(1.0));
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[slot] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
                // Right first so the left subtree is expanded first.
                stack.push((r, c.right, depth + 1));
                stack.push((l, c.left, depth + 1));
            }
        }
    }
    Ok(RegressionTree {
        width,
        nodes,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
    })
}

impl RegressionTree {
    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.width {
            return Err(Error::ShapeMismatch { expected: self.width, got: x.len() });
        }
        Ok(())
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.eval(x))
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Node::Split { feature, threshold, left, right } = self.nodes[i] {
            i = if x[feature] <= threshold { left } else { right };
        }
        i
    }

    /// Two scalars per split (feature, threshold), one per leaf.
    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Split { .. } => 2,
                Node::Leaf { .. } => 1,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub tree_seeds: Vec<u64>,
    pub bootstrap: bool,
}

/// Bagged trees, each on an `N`-row bootstrap resample drawn with the seed
/// derived from `(seed, tree index)`. Trees fit in parallel.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    n_trees: usize,
    params: &TreeParams,
    bootstrap: bool,
    seed: u64,
) -> Result<RandomForest> {
    let width = check_data(x, y)?;
    if n_trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let tree_seeds: Vec<u64> = (0..n_trees).map(|i| seed::derive(seed, &[i as u64])).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let rows: Vec<usize> = if bootstrap {
                let mut rng = seed::rng_for(s, &[seed::tag("bootstrap")]);
                (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            fit_rows(x, y, rows, params, width, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest { trees, tree_seeds, bootstrap })
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }

    pub fn parameter_count(&self) -> usize {
        self.trees.iter().map(RegressionTree::parameter_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub initial: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after each stage; entry 0 is the constant model.
    pub train_mse: Vec<f64>,
}

/// Stagewise least-squares boosting: each tree fits the current residuals
/// and joins the ensemble scaled by `shrinkage`. Stops early once an added
/// stage changes the training MSE by less than 1e-12.
pub fn fit_boosted(
    x: &[Vec<f64>],
    y: &[f64],
    n_trees: usize,
    shrinkage: f64,
    params: &TreeParams,
    seed: u64,
) -> Result<BoostedEnsemble> {
    let width = check_data(x, y)?;
    if n_trees == 0 {
        return Err(Error::InvalidArgument("boosting needs at least one stage".into()));
    }
    if !(shrinkage > 0.0 && shrinkage <= 1.0) {
        return Err(Error::InvalidArgument(format!("shrinkage {shrinkage} outside (0, 1]")));
    }
    let n = y.len() as f64;
    let initial = y.iter().sum::<f64>() / n;
    let mut fitted = vec![initial; y.len()];
    let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mut history = vec![mse(&fitted)];
    let mut trees = Vec::new();
    for m in 0..n_trees {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let rows: Vec<usize> = (0..x.len()).collect();
        let tree = fit_rows(x, &residual, rows, params, width, seed::derive(seed, &[m as u64]))?;
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += shrinkage * tree.eval(row);
        }
        trees.push(tree);
        let now = mse(&fitted);
        let prev = *history.last().expect("seeded");
        history.push(now);
        if (prev - now).abs() < 1e-12 {
            break;
        }
    }
    Ok(BoostedEnsemble { initial, shrinkage, trees, train_mse: history })
}

impl BoostedEnsemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(x)?;
        }
        Ok(self.initial + self.shrinkage * sum)
    }

    /// Tree scalars plus the initial prediction and the shrinkage.
    pub fn parameter_count(&self) -> usize {
        self.trees.iter().map(RegressionTree::parameter_count).sum::<usize>() + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ensemble {
    Forest(RandomForest),
    Boosted(BoostedEnsemble),
}

impl Ensemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Ensemble::Forest(f) => f.predict(x),
            Ensemble::Boosted(b) => b.predict(x),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Ensemble::Forest(f) => f.parameter_count(),
            Ensemble::Boosted(b) => b.parameter_count(),
        }
    }
}

/// On-disk form of a tree ensemble together with its label transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub format_version: u32,
    pub label_transform: LabelTransform,
    pub model: Ensemble,
}

impl EnsembleFile {
    pub fn new(model: Ensemble, label_transform: LabelTransform) -> Self {
        EnsembleFile { format_version: FORMAT_VERSION, label_transform, model }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: EnsembleFile = serde_json::from_str(s)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleEstimator {
    pub name: String,
    pub model: Ensemble,
    pub label_transform: LabelTransform,
    pub spec: EncodingSpec,
    pub row_counts: BTreeMap<String, usize>,
}

impl Estimator for EnsembleEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        let y = self.model.predict(&encode_flat(&self.spec, q)?.values)?;
        selectivity_to_cardinality(self.label_transform.invert(y), &self.row_counts, q)
    }

    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }
}
