//! CART regression trees, bootstrap forests, and the decision-stump map.
//!
//! Every internal node `s` of a fitted tree contributes one stump column
//!
//! ```text
//! ψ_s(x) =  N(s_R) / sqrt(N(s_L) N(s_R))   if x reaches s and goes left
//!          −N(s_L) / sqrt(N(s_L) N(s_R))   if x reaches s and goes right
//!           0                              otherwise
//! ```
//!
//! where the counts are the node's frozen training (in-bag) counts. Ordinary
//! least squares of the centered response on these columns reproduces the
//! tree's predictions exactly when the tree was grown on the same rows.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NerfError, Result};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry_fraction: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 5,
            mtry_fraction: 1.0 / 3.0,
        }
    }
}

impl TreeParams {
    /// Number of candidate features searched at each node.
    pub fn mtry(&self, n_features: usize) -> usize {
        ((self.mtry_fraction * n_features as f64).ceil() as usize).clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Child {
    Split(usize),
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub left: Child,
    pub right: Child,
}

impl SplitNode {
    /// Stump values for the (left, right) children.
    pub fn stump_values(&self) -> (f64, f64) {
        let nl = self.n_left as f64;
        let nr = self.n_right as f64;
        let scale = (nl * nr).sqrt();
        (nr / scale, -nl / scale)
    }
}

/// A fitted regression tree; `splits` are stored in pre-order and index the
/// stump columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTree {
    pub root: Child,
    pub splits: Vec<SplitNode>,
    pub leaf_means: Vec<f64>,
    pub n_features: usize,
}

impl FittedTree {
    pub fn n_splits(&self) -> usize {
        self.splits.len()
    }

    pub fn features_used(&self) -> BTreeSet<usize> {
        self.splits.iter().map(|s| s.feature).collect()
    }

    fn route(&self, features: &DMatrix<f64>, row: usize, mut visit: impl FnMut(usize, bool)) -> usize {
        let mut node = self.root;
        loop {
            match node {
                Child::Leaf(l) => return l,
                Child::Split(s) => {
                    let split = &self.splits[s];
                    let left = features[(row, split.feature)] <= split.threshold;
                    visit(s, left);
                    node = if left { split.left } else { split.right };
                }
            }
        }
    }

    fn check_columns(&self, features: &DMatrix<f64>) -> Result<()> {
        if features.ncols() != self.n_features {
            return Err(NerfError::DimensionMismatch(format!(
                "tree expects {} columns, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_columns(features)?;
        Ok(DVector::from_fn(features.nrows(), |i, _| {
            self.leaf_means[self.route(features, i, |_, _| {})]
        }))
    }

    /// The stump feature matrix Ψ_t for the given rows (m × m_t).
    pub fn stump_features(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_columns(features)?;
        let values: Vec<(f64, f64)> = self.splits.iter().map(SplitNode::stump_values).collect();
        let mut out = DMatrix::zeros(features.nrows(), self.splits.len());
        for i in 0..features.nrows() {
            self.route(features, i, |s, left| {
                out[(i, s)] = if left { values[s].0 } else { values[s].1 };
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen_splits = vec![false; self.splits.len()];
        let mut seen_leaves = vec![false; self.leaf_means.len()];
        let mut stack = vec![self.root];
        while let Some(node) = stack.pop() {
            let slot = match node {
                Child::Split(s) => seen_splits.get_mut(s),
                Child::Leaf(l) => seen_leaves.get_mut(l),
            };
            match slot {
                Some(seen) if !*seen => *seen = true,
                _ => return Err(NerfError::InvalidInput("malformed tree topology".into())),
            }
            if let Child::Split(s) = node {
                let split = &self.splits[s];
                if split.feature >= self.n_features || split.n_left == 0 || split.n_right == 0 {
                    return Err(NerfError::InvalidInput("malformed split".into()));
                }
                stack.push(split.right);
                stack.push(split.left);
            }
        }
        if seen_splits.iter().chain(&seen_leaves).any(|s| !s) {
            return Err(NerfError::InvalidInput("unreachable tree node".into()));
        }
        Ok(())
    }
}

struct TreeBuilder<'a, R> {
    features: &'a DMatrix<f64>,
    response: &'a DVector<f64>,
    params: TreeParams,
    mtry: usize,
    rng: &'a mut R,
    splits: Vec<SplitNode>,
    leaf_means: Vec<f64>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> Child {
        let mean = rows.iter().map(|&r| self.response[r]).sum::<f64>() / rows.len() as f64;
        self.leaf_means.push(mean);
        Child::Leaf(self.leaf_means.len() - 1)
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let total: f64 = rows.iter().map(|&r| self.response[r]).sum();
        let sumsq: f64 = rows.iter().map(|&r| self.response[r].powi(2)).sum();
        let sse = sumsq - total * total / n as f64;
        let mut candidates: Vec<usize> = sample(self.rng, self.features.ncols(), self.mtry).into_vec();
        candidates.sort_unstable();

        let mut best: Option<Candidate> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in candidates {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.features[(r, feature)], self.response[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += pairs[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                    - total * total / n as f64;
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain + 1e-12 * b.gain.abs(),
                };
                if better {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * sse.max(f64::MIN_POSITIVE) && b.gain > 0.0)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> Child {
        let n = rows.len();
        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        let first = self.response[rows[0]];
        let constant = rows.iter().all(|&r| self.response[r] == first);
        if depth_reached || n < 2 * self.params.min_leaf || constant {
            return self.leaf(&rows);
        }
        let Some(best) = self.best_split(&rows) else {
            return self.leaf(&rows);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.features[(r, best.feature)] <= best.threshold);
        let id = self.splits.len();
        self.splits.push(SplitNode {
            feature: best.feature,
            threshold: best.threshold,
            n_left: left.len(),
            n_right: right.len(),
            left: Child::Leaf(usize::MAX),
            right: Child::Leaf(usize::MAX),
        });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.splits[id].left = l;
        self.splits[id].right = r;
        Child::Split(id)
    }
}

/// Grows a CART regression tree on the (multi)set `sample_indices`.
pub fn fit_tree<R: Rng>(
    features: &DMatrix<f64>,
    response: &DVector<f64>,
    sample_indices: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<FittedTree> {
    if sample_indices.is_empty() {
        return Err(NerfError::InvalidInput("cannot fit a tree on zero samples".into()));
    }
    if features.ncols() == 0 {
        return Err(NerfError::InvalidInput("cannot fit a tree without features".into()));
    }
    if features.nrows() != response.len() {
        return Err(NerfError::DimensionMismatch(format!(
            "{} feature rows but {} responses",
            features.nrows(),
            response.len()
        )));
    }
    if params.min_leaf == 0 {
        return Err(NerfError::InvalidInput("min_leaf must be at least 1".into()));
    }
    if let Some(&bad) = sample_indices.iter().find(|&&i| i >= features.nrows()) {
        return Err(NerfError::InvalidInput(format!("sample index {bad} out of range")));
    }
    let mut builder = TreeBuilder {
        features,
        response,
        params: *params,
        mtry: params.mtry(features.ncols()),
        rng,
        splits: Vec::new(),
        leaf_means: Vec::new(),
    };
    let root = builder.grow(sample_indices.to_vec(), 0);
    Ok(FittedTree {
        root,
        splits: builder.splits,
        leaf_means: builder.leaf_means,
        n_features: features.ncols(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Draw an n-sample bootstrap per tree; otherwise every tree sees all rows.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            tree: TreeParams::default(),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<FittedTree>,
    pub in_bag_indices: Vec<Vec<usize>>,
    pub seed: u64,
    pub params: ForestParams,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Rows never drawn into tree `t`'s bootstrap sample.
    pub fn oob_indices(&self, t: usize, n: usize) -> Vec<usize> {
        let mut in_bag = vec![false; n];
        for &i in &self.in_bag_indices[t] {
            in_bag[i] = true;
        }
        (0..n).filter(|&i| !in_bag[i]).collect()
    }

    /// Plain random-forest prediction (mean of tree predictions).
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(features.nrows());
        for tree in &self.trees {
            out += tree.predict(features)?;
        }
        Ok(out / self.trees.len() as f64)
    }
}

/// Fits `n_trees` trees, each on a bootstrap drawn from the substream
/// keyed by `(seed, tree_index)`.
pub fn fit_forest(
    features: &DMatrix<f64>,
    response: &DVector<f64>,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    if params.n_trees == 0 {
        return Err(NerfError::InvalidInput("a forest needs at least one tree".into()));
    }
    let n = features.nrows();
    let fitted: Vec<(FittedTree, Vec<usize>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, Domain::Tree, t as u64);
            let in_bag: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let tree = fit_tree(features, response, &in_bag, &params.tree, &mut rng)?;
            Ok((tree, in_bag))
        })
        .collect::<Result<_>>()?;
    let (trees, in_bag_indices) = fitted.into_iter().unzip();
    Ok(Forest {
        trees,
        in_bag_indices,
        seed,
        params: *params,
    })
}

/// Union over trees of the features used by at least one split.
pub fn features_used(forest: &Forest) -> BTreeSet<usize> {
    forest.trees.iter().flat_map(|t| t.features_used()).collect()
}
