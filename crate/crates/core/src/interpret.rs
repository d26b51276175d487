//! Global and local importance of features and of the network.
//!
//! Every transformed column of every tree belongs to exactly one group:
//! node effects to cohesion, embedding columns and stumps splitting on them
//! to the embedding, and `X_k` with stumps splitting on `X_k` to feature `k`.
//! Importances are computed from the per-tree group contributions of
//! [`Decomposition`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NerfError, Result};
use crate::linalg::{mean, sample_sd};
use crate::model::{group_column, Decomposition, Group, NerfPlusModel, NodeBlocks};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Feature(usize),
    /// Cohesion and embedding together.
    Network,
    Cohesion,
    Embedding,
}

impl Target {
    /// Every feature followed by network, cohesion and embedding.
    pub fn all(n_features: usize) -> Vec<Target> {
        (0..n_features)
            .map(Target::Feature)
            .chain([Target::Network, Target::Cohesion, Target::Embedding])
            .collect()
    }

    pub fn groups(&self) -> Vec<Group> {
        match *self {
            Target::Feature(k) => vec![Group::Feature(k)],
            Target::Network => vec![Group::Cohesion, Group::Embedding],
            Target::Cohesion => vec![Group::Cohesion],
            Target::Embedding => vec![Group::Embedding],
        }
    }

    pub fn name(&self, feature_names: &[String]) -> String {
        match *self {
            Target::Feature(k) => feature_names.get(k).cloned().unwrap_or_else(|| format!("x{k}")),
            Target::Network => "network".into(),
            Target::Cohesion => "cohesion".into(),
            Target::Embedding => "embedding".into(),
        }
    }

    fn columns(&self, p: usize) -> Vec<usize> {
        self.groups().into_iter().map(|g| group_column(g, p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Increase in RMSE.
    Rmse,
    /// Decrease in R², so larger is more important for both metrics.
    R2,
}

impl Metric {
    fn name(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse_increase",
            Metric::R2 => "r2_decrease",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Permutation,
    MdiPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub name: String,
    pub score: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: Method,
    pub metric: String,
    pub targets: Vec<TargetScore>,
    pub n_permutations: Option<usize>,
    pub seed: Option<u64>,
}

impl ImportanceReport {
    pub fn score(&self, name: &str) -> Option<f64> {
        self.targets.iter().find(|t| t.name == name).map(|t| t.score)
    }

    pub fn to_json(&self) -> Result<String> {
        if self.targets.iter().any(|t| !t.score.is_finite() || !t.stderr.is_finite()) {
            return Err(NerfError::Singular("importance report contains non-finite scores".into()));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| NerfError::io(path, e))
    }
}

fn rmse(y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    ((y - pred).norm_squared() / y.len() as f64).sqrt()
}

/// `1 − SSE/SST` with SST taken around `center`.
pub fn r_squared(y: &DVector<f64>, pred: &DVector<f64>, center: f64) -> f64 {
    let sst: f64 = y.iter().map(|v| (v - center).powi(2)).sum();
    let sse = (y - pred).norm_squared();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - sse / sst
}

fn check_targets(targets: &[Target], p: usize) -> Result<()> {
    match targets.iter().find(|t| matches!(t, Target::Feature(k) if *k >= p)) {
        Some(t) => Err(NerfError::InvalidInput(format!("unknown target {t:?}"))),
        None => Ok(()),
    }
}

/// Score changes for each target under each given row permutation.
/// Returns `draws × targets`.
pub fn permutation_score_changes(
    decomposition: &Decomposition,
    response: &DVector<f64>,
    targets: &[Target],
    permutations: &[Vec<usize>],
    metric: Metric,
) -> Result<Vec<Vec<f64>>> {
    let p = decomposition.n_features;
    check_targets(targets, p)?;
    let agg = decomposition.aggregate();
    let rows = agg.nrows();
    if response.len() != rows {
        return Err(NerfError::DimensionMismatch(format!(
            "{} responses for {rows} evaluation rows",
            response.len()
        )));
    }
    let pred = decomposition.predictions();
    let center = decomposition.response_mean;
    let score = |pr: &DVector<f64>| match metric {
        Metric::Rmse => rmse(response, pr),
        Metric::R2 => -r_squared(response, pr, center),
    };
    let base = score(&pred);
    let sums: Vec<DVector<f64>> = targets
        .iter()
        .map(|t| {
            let cols = t.columns(p);
            DVector::from_fn(rows, |i, _| cols.iter().map(|&c| agg[(i, c)]).sum())
        })
        .collect();
    permutations
        .par_iter()
        .map(|perm| {
            if perm.len() != rows {
                return Err(NerfError::DimensionMismatch("permutation length".into()));
            }
            Ok(sums
                .iter()
                .map(|s| {
                    let permuted = DVector::from_fn(rows, |i, _| pred[i] - s[i] + s[perm[i]]);
                    score(&permuted) - base
                })
                .collect())
        })
        .collect()
}

/// Draw `b` shuffles rows with the substream keyed by `(seed, b)`, shared by
/// all targets.
pub fn draw_permutations(rows: usize, n_permutations: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..n_permutations)
        .map(|b| {
            let mut perm: Vec<usize> = (0..rows).collect();
            perm.shuffle(&mut substream(seed, Domain::Permutation, b as u64));
            perm
        })
        .collect()
}

/// Mean metric degradation when each target's contributions are shuffled
/// across evaluation rows, jointly over all trees.
pub fn permutation_importance(
    model: &NerfPlusModel,
    blocks: &NodeBlocks,
    response: &DVector<f64>,
    targets: &[Target],
    n_permutations: usize,
    metric: Metric,
    seed: u64,
) -> Result<ImportanceReport> {
    if n_permutations < 1 {
        return Err(NerfError::InvalidInput("at least one permutation is required".into()));
    }
    let d = model.decompose(blocks)?;
    let perms = draw_permutations(blocks.n_rows(), n_permutations, seed);
    let changes = permutation_score_changes(&d, response, targets, &perms, metric)?;
    let targets = targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let draws: Vec<f64> = changes.iter().map(|row| row[k]).collect();
            TargetScore {
                name: t.name(&model.feature_names),
                score: mean(&draws),
                stderr: sample_sd(&draws) / (draws.len() as f64).sqrt(),
            }
        })
        .collect();
    Ok(ImportanceReport {
        method: Method::Permutation,
        metric: metric.name().into(),
        targets,
        n_permutations: Some(n_permutations),
        seed: Some(seed),
    })
}

/// Per-tree R² of the partial prediction that keeps the target's columns
/// and replaces every other column by its training mean.
pub fn mdi_plus_per_tree(decomposition: &Decomposition, response: &DVector<f64>, target: Target) -> Result<Vec<f64>> {
    let p = decomposition.n_features;
    check_targets(&[target], p)?;
    let cols = target.columns(p);
    let center = mean(response.as_slice());
    Ok(decomposition
        .per_tree
        .iter()
        .zip(&decomposition.tree_means)
        .map(|(c, m)| {
            let offset = m.sum() - cols.iter().map(|&g| m[g]).sum::<f64>() + decomposition.response_mean;
            let partial = DVector::from_fn(c.nrows(), |i, _| cols.iter().map(|&g| c[(i, g)]).sum::<f64>() + offset);
            r_squared(response, &partial, center)
        })
        .collect())
}

pub fn mdi_plus(
    model: &NerfPlusModel,
    blocks: &NodeBlocks,
    response: &DVector<f64>,
    targets: &[Target],
) -> Result<ImportanceReport> {
    let d = model.decompose(blocks)?;
    if response.len() != blocks.n_rows() {
        return Err(NerfError::DimensionMismatch(format!(
            "{} responses for {} evaluation rows",
            response.len(),
            blocks.n_rows()
        )));
    }
    let targets = targets
        .iter()
        .map(|t| {
            let per_tree = mdi_plus_per_tree(&d, response, *t)?;
            Ok(TargetScore {
                name: t.name(&model.feature_names),
                score: mean(&per_tree),
                stderr: sample_sd(&per_tree) / (per_tree.len() as f64).sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImportanceReport {
        method: Method::MdiPlus,
        metric: "r2".into(),
        targets,
        n_permutations: None,
        seed: None,
    })
}

/// Per-sample contributions relative to the average training contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalImportance {
    pub names: Vec<String>,
    /// rows × (p + 3): features, then network, cohesion, embedding.
    pub scores: DMatrix<f64>,
    /// Tree-averaged training-mean contribution of each group
    /// (features, cohesion, embedding).
    pub baseline: DVector<f64>,
    pub node_indices: Vec<usize>,
}

impl LocalImportance {
    pub fn n_features(&self) -> usize {
        self.scores.ncols() - 3
    }

    pub fn feature_scores(&self) -> DMatrix<f64> {
        self.scores.columns(0, self.n_features()).into_owned()
    }

    pub fn target(&self, target: Target) -> DVector<f64> {
        let p = self.n_features();
        let c = match target {
            Target::Feature(k) => k,
            Target::Network => p,
            Target::Cohesion => p + 1,
            Target::Embedding => p + 2,
        };
        self.scores.column(c).into_owned()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for row in self.scores.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| NerfError::io(path, e))
    }
}

pub fn local_importance(model: &NerfPlusModel, blocks: &NodeBlocks) -> Result<LocalImportance> {
    let d = model.decompose(blocks)?;
    let p = d.n_features;
    let agg = d.aggregate();
    let base = d.aggregate_means();
    let rows = agg.nrows();
    let mut scores = DMatrix::zeros(rows, p + 3);
    for i in 0..rows {
        for k in 0..p {
            scores[(i, k)] = agg[(i, k)] - base[k];
        }
        let coh = agg[(i, p)] - base[p];
        let emb = agg[(i, p + 1)] - base[p + 1];
        scores[(i, p)] = coh + emb;
        scores[(i, p + 1)] = coh;
        scores[(i, p + 2)] = emb;
    }
    let names = Target::all(p).iter().map(|t| t.name(&model.feature_names)).collect();
    Ok(LocalImportance {
        names,
        scores,
        baseline: base,
        node_indices: blocks.node_indices.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_edge_cases() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(r_squared(&y, &y, 2.0), 1.0);
        assert_eq!(r_squared(&y, &DVector::from_element(3, 2.0), 2.0), 0.0);
    }

    #[test]
    fn permutations_are_reproducible() {
        assert_eq!(draw_permutations(10, 3, 5), draw_permutations(10, 3, 5));
        assert_ne!(draw_permutations(10, 3, 5), draw_permutations(10, 3, 6));
        let mut p = draw_permutations(10, 1, 0)[0].clone();
        p.sort();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn target_names() {
        let names = vec!["a".to_string(), "b".to_string()];
        let all: Vec<String> = Target::all(2).iter().map(|t| t.name(&names)).collect();
        assert_eq!(all, ["a", "b", "network", "cohesion", "embedding"]);
    }
}
