//! NeRF+ fitting, prediction on new network nodes, and additive
//! decomposition of predictions into feature and network parts.
//!
//! Fitting runs in three steps:
//!
//! 1. a random forest on `X̃ = [X, Z]`, where `Z` is the spectral embedding
//!    of the training network;
//! 2. per tree, a generalized ridge fit of `y` on node effects `α`, the
//!    linear block `X̃` and the tree's stump features `Ψ_t`;
//! 3. predictions average the per-tree linear models.
//!
//! RF+ and plain network-cohesion regression (RNC) are configurations of the
//! same pipeline; see [`NerfPlusConfig::rf_plus`] and [`NerfPlusConfig::rnc`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_laplacian, center_with, Dataset, Laplacian, Network};
use crate::embedding::{spectral_embedding, SpectralEmbedding};
use crate::error::{NerfError, Result};
use crate::forest::{features_used, fit_forest, Child, FittedTree, Forest, ForestParams, SplitNode, TreeParams};
use crate::linalg::{columns_of, entries_of, hstack, rows_of, sym_eigen};
use crate::ridge::{cv_tune_with_plan, solve_profiled, CohesiveExtension, CvPlan, PenaltyGrid, PenaltySpec};
use crate::rng::{substream, Domain};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NerfPlusConfig {
    pub n_trees: usize,
    pub mtry_fraction: f64,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Spectral embedding dimension; 0 disables `Z`.
    pub embedding_dim: usize,
    pub lambda_l: f64,
    /// Include the node-effect block `α`. A `lambda_alpha` grid of exactly
    /// `[0]` also disables it.
    pub node_effects: bool,
    pub penalty_grid: PenaltyGrid,
    pub cv_folds: usize,
    /// Trees whose penalties are tuned by cross-validation; the rest draw
    /// uniformly from the tuned penalties.
    pub trees_to_tune: usize,
    /// Fit each tree's ridge model on its out-of-bag rows only.
    pub fit_on_oob: bool,
    pub restrict_linear_to_split_features: bool,
    pub seed: u64,
}

impl Default for NerfPlusConfig {
    fn default() -> Self {
        NerfPlusConfig {
            n_trees: 500,
            mtry_fraction: 1.0 / 3.0,
            max_depth: None,
            min_leaf: 5,
            bootstrap: true,
            embedding_dim: 2,
            lambda_l: 0.05,
            node_effects: true,
            penalty_grid: PenaltyGrid::default(),
            cv_folds: 5,
            trees_to_tune: 10,
            fit_on_oob: false,
            restrict_linear_to_split_features: true,
            seed: 0,
        }
    }
}

impl NerfPlusConfig {
    /// RF+: no node effects and no embedding.
    pub fn rf_plus() -> Self {
        NerfPlusConfig {
            node_effects: false,
            embedding_dim: 0,
            ..Default::default()
        }
    }

    /// Network-cohesion regression on `[X, Z]`: one depth-zero tree, so
    /// there are no stump columns.
    pub fn rnc(embedding_dim: usize) -> Self {
        NerfPlusConfig {
            n_trees: 1,
            max_depth: Some(0),
            bootstrap: false,
            embedding_dim,
            trees_to_tune: 1,
            restrict_linear_to_split_features: false,
            ..Default::default()
        }
    }

    pub fn uses_node_effects(&self) -> bool {
        self.node_effects && !self.penalty_grid.lambda_alpha.iter().all(|&v| v == 0.0)
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            tree: TreeParams {
                max_depth: self.max_depth,
                min_leaf: self.min_leaf,
                mtry_fraction: self.mtry_fraction,
            },
            bootstrap: self.bootstrap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NerfError::InvalidInput(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if !(self.mtry_fraction > 0.0 && self.mtry_fraction <= 1.0) {
            return bad(format!("mtry_fraction must be in (0, 1], got {}", self.mtry_fraction));
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be at least 1".into());
        }
        if !(self.lambda_l.is_finite() && self.lambda_l >= 0.0) {
            return bad(format!("lambda_l must be finite and >= 0, got {}", self.lambda_l));
        }
        if self.trees_to_tune > self.n_trees {
            return bad(format!(
                "trees_to_tune ({}) exceeds n_trees ({})",
                self.trees_to_tune, self.n_trees
            ));
        }
        self.penalty_grid.validate()?;
        if !self.penalty_grid.is_singleton() {
            if self.trees_to_tune == 0 {
                return bad("trees_to_tune must be at least 1 when the penalty grid has several values".into());
            }
            if self.cv_folds < 2 {
                return bad("cv_folds must be at least 2".into());
            }
        }
        if self.fit_on_oob && !self.bootstrap {
            return bad("fit_on_oob requires bootstrap sampling".into());
        }
        Ok(())
    }
}

/// Training-set means of one tree's transformed columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeans {
    pub alpha: f64,
    pub linear: Vec<f64>,
    pub stump: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    /// Node effects for the training nodes (empty without node effects).
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub penalty: PenaltySpec,
    pub means: ColumnMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerfPlusModel {
    pub config: NerfPlusConfig,
    pub feature_names: Vec<String>,
    pub column_means: Vec<f64>,
    pub response_mean: f64,
    pub embedding: Option<SpectralEmbedding>,
    pub forest: Forest,
    /// Columns of `X̃ = [X, Z]` in the linear block, shared by all trees.
    pub linear_features: Vec<usize>,
    pub trees: Vec<TreeFit>,
    /// Centered training features, `n × p`.
    pub train_features: DMatrix<f64>,
    /// Centered training response.
    pub train_response: DVector<f64>,
    pub network: Network,
    laplacian: Laplacian,
}

/// Additive component of a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Feature(usize),
    Cohesion,
    Embedding,
}

/// Transformed columns for a set of nodes: `X̃` plus each tree's node
/// effects and stump features.
#[derive(Debug, Clone)]
pub struct NodeBlocks {
    /// `[X − means, Z]`, rows × (p + r).
    pub extended: DMatrix<f64>,
    /// Per tree; empty vectors without node effects.
    pub alpha: Vec<DVector<f64>>,
    pub stumps: Vec<DMatrix<f64>>,
    /// Combined-network node id of each row.
    pub node_indices: Vec<usize>,
}

impl NodeBlocks {
    pub fn n_rows(&self) -> usize {
        self.extended.nrows()
    }
}

/// Per-tree group contributions. Columns are `[feature 0 .. p−1, cohesion,
/// embedding]`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub n_features: usize,
    pub per_tree: Vec<DMatrix<f64>>,
    /// Per tree, the group contributions of the training column means.
    pub tree_means: Vec<DVector<f64>>,
    pub response_mean: f64,
}

impl Decomposition {
    pub fn n_groups(&self) -> usize {
        self.n_features + 2
    }

    pub fn column(&self, group: Group) -> usize {
        group_column(group, self.n_features)
    }

    /// Tree-averaged contributions, rows × groups.
    pub fn aggregate(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.per_tree[0].nrows(), self.n_groups());
        for c in &self.per_tree {
            out += c;
        }
        out / self.per_tree.len() as f64
    }

    /// Tree-averaged training-mean contributions.
    pub fn aggregate_means(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_groups());
        for m in &self.tree_means {
            out += m;
        }
        out / self.tree_means.len() as f64
    }

    /// Predictions on the response scale.
    pub fn predictions(&self) -> DVector<f64> {
        let agg = self.aggregate();
        DVector::from_fn(agg.nrows(), |i, _| agg.row(i).sum() + self.response_mean)
    }
}

pub(crate) fn group_column(group: Group, p: usize) -> usize {
    match group {
        Group::Feature(k) => k,
        Group::Cohesion => p,
        Group::Embedding => p + 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub node_indices: Vec<usize>,
    pub predictions: DVector<f64>,
    /// Tree-averaged parts; `cohesion + embedding + features + response
    /// mean = predictions`.
    pub cohesion_part: DVector<f64>,
    pub embedding_part: DVector<f64>,
    pub feature_part: DVector<f64>,
}

/// Fits NeRF+ on a dataset whose rows are the nodes of `network`.
pub fn fit(dataset: &Dataset, network: &Network, config: &NerfPlusConfig) -> Result<NerfPlusModel> {
    fit_named(dataset, network, config, None)
}

pub fn fit_named(
    dataset: &Dataset,
    network: &Network,
    config: &NerfPlusConfig,
    feature_names: Option<Vec<String>>,
) -> Result<NerfPlusModel> {
    config.validate()?;
    let n = dataset.n_samples();
    let p = dataset.n_features();
    if network.n_nodes() != n {
        return Err(NerfError::DimensionMismatch(format!(
            "network has {} nodes but the dataset has {n} samples",
            network.n_nodes()
        )));
    }
    let feature_names = match feature_names {
        Some(names) if names.len() != p => {
            return Err(NerfError::DimensionMismatch(format!(
                "{} feature names for {p} columns",
                names.len()
            )))
        }
        Some(names) => names,
        None => (0..p).map(|j| format!("x{j}")).collect(),
    };
    let data = if dataset.is_centered { dataset.clone() } else { dataset.clone().center()? };
    let laplacian = build_laplacian(network, config.lambda_l)?;
    let embedding = match config.embedding_dim {
        0 => None,
        r => Some(spectral_embedding(&laplacian, r)?),
    };
    let extended = extend_features(&data.features, embedding.as_ref().map(|e| &e.coordinates))?;
    let y = &data.response;
    let forest = fit_forest(&extended, y, &config.forest_params(), config.seed)?;

    let linear_features: Vec<usize> = if config.restrict_linear_to_split_features {
        features_used(&forest).into_iter().collect()
    } else {
        (0..extended.ncols()).collect()
    };
    let q = linear_features.len();
    let linear = columns_of(&extended, &linear_features);
    let designs: Vec<DMatrix<f64>> = forest
        .trees
        .par_iter()
        .map(|tree| hstack(&[&linear, &tree.stump_features(&extended)?]))
        .collect::<Result<_>>()?;

    let with_alpha = config.uses_node_effects();
    let grid = if with_alpha {
        config.penalty_grid.clone()
    } else {
        PenaltyGrid {
            lambda_alpha: vec![0.0],
            ..config.penalty_grid.clone()
        }
    };
    let penalties = tune_penalties(config, &grid, &designs, q, y, with_alpha.then_some(&laplacian))?;

    let basis = match (with_alpha, config.fit_on_oob) {
        (true, false) => Some(sym_eigen(&laplacian.matrix)?),
        _ => None,
    };
    let trees = (0..forest.n_trees())
        .into_par_iter()
        .map(|t| {
            let f = &designs[t];
            let (alpha, theta) = if config.fit_on_oob {
                fit_tree_oob(&forest, t, f, y, q, &penalties[t], with_alpha.then_some(&laplacian))?
            } else {
                solve_profiled(basis.as_ref(), f, y, q, &penalties[t])?
            };
            let col_mean = |j: usize| f.column(j).mean();
            Ok(TreeFit {
                means: ColumnMeans {
                    alpha: if alpha.is_empty() { 0.0 } else { alpha.mean() },
                    linear: (0..q).map(col_mean).collect(),
                    stump: (q..f.ncols()).map(col_mean).collect(),
                },
                beta: theta.rows(0, q).into_owned(),
                gamma: theta.rows(q, f.ncols() - q).into_owned(),
                alpha,
                penalty: penalties[t],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(NerfPlusModel {
        config: config.clone(),
        feature_names,
        column_means: data.column_means.clone(),
        response_mean: data.response_mean,
        embedding,
        forest,
        linear_features,
        trees,
        train_features: data.features.clone(),
        train_response: data.response.clone(),
        network: network.clone(),
        laplacian,
    })
}

fn extend_features(features: &DMatrix<f64>, z: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match z {
        Some(z) => hstack(&[features, z]),
        None => Ok(features.clone()),
    }
}

/// Tunes `trees_to_tune` trees by cross-validation and assigns the other
/// trees a uniformly drawn tuned penalty.
fn tune_penalties(
    config: &NerfPlusConfig,
    grid: &PenaltyGrid,
    designs: &[DMatrix<f64>],
    q: usize,
    y: &DVector<f64>,
    laplacian: Option<&Laplacian>,
) -> Result<Vec<PenaltySpec>> {
    let t_total = designs.len();
    if grid.is_singleton() {
        let spec = PenaltySpec::new(grid.lambda_alpha[0], grid.lambda_beta[0], grid.lambda_gamma[0])?;
        return Ok(vec![spec; t_total]);
    }
    let plan = CvPlan::new(y.len(), laplacian, config.cv_folds, config.seed)?;
    let k = config.trees_to_tune;
    let tuned = designs[..k]
        .par_iter()
        .map(|f| Ok(cv_tune_with_plan(&plan, f, q, y, grid)?.spec))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..t_total)
        .map(|t| {
            if t < k {
                tuned[t]
            } else {
                tuned[substream(config.seed, Domain::PenaltyReuse, t as u64).random_range(0..k)]
            }
        })
        .collect())
}

/// Solves one tree's ridge problem on its out-of-bag rows; in-bag node
/// effects are filled in by cohesive extension.
fn fit_tree_oob(
    forest: &Forest,
    t: usize,
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    q: usize,
    spec: &PenaltySpec,
    laplacian: Option<&Laplacian>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = y.len();
    let oob = forest.oob_indices(t, n);
    if oob.is_empty() {
        return Err(NerfError::InvalidInput(format!("tree {t} has no out-of-bag rows")));
    }
    let f = rows_of(design, &oob);
    let y_oob = entries_of(y, &oob);
    match laplacian {
        None => solve_profiled(None, &f, &y_oob, q, spec),
        Some(l) => {
            let basis = sym_eigen(&l.induced(&oob))?;
            let (alpha_oob, theta) = solve_profiled(Some(&basis), &f, &y_oob, q, spec)?;
            let ext = CohesiveExtension::new(&l.matrix, &oob)?;
            let alpha_in = ext.apply(&alpha_oob)?;
            let mut alpha = DVector::zeros(n);
            for (k, &i) in oob.iter().enumerate() {
                alpha[i] = alpha_oob[k];
            }
            for (k, &i) in ext.test_indices.iter().enumerate() {
                alpha[i] = alpha_in[k];
            }
            Ok((alpha, theta))
        }
    }
}

impl NerfPlusModel {
    pub fn n_train(&self) -> usize {
        self.train_features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.train_features.ncols()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.as_ref().map_or(0, |e| e.r)
    }

    pub fn has_node_effects(&self) -> bool {
        self.trees.first().is_some_and(|t| !t.alpha.is_empty())
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.laplacian
    }

    /// Group of column `c` of `X̃`.
    pub fn extended_group(&self, c: usize) -> Group {
        if c < self.n_features() {
            Group::Feature(c)
        } else {
            Group::Embedding
        }
    }

    /// Transformed blocks for the training nodes.
    pub fn training_blocks(&self) -> Result<NodeBlocks> {
        let extended = extend_features(
            &self.train_features,
            self.embedding.as_ref().map(|e| &e.coordinates),
        )?;
        let stumps = self
            .forest
            .trees
            .par_iter()
            .map(|tree| tree.stump_features(&extended))
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeBlocks {
            alpha: self.trees.iter().map(|t| t.alpha.clone()).collect(),
            stumps,
            node_indices: (0..self.n_train()).collect(),
            extended,
        })
    }

    /// Checks that `combined` restricted to `train_indices` reproduces the
    /// training network and returns the extension operator to the other
    /// nodes.
    pub fn extension(&self, combined: &Network, train_indices: &[usize]) -> Result<CohesiveExtension> {
        if train_indices.len() != self.n_train() {
            return Err(NerfError::DimensionMismatch(format!(
                "{} training indices for a model trained on {} nodes",
                train_indices.len(),
                self.n_train()
            )));
        }
        let induced = combined.induced(train_indices)?;
        if induced.edges() != self.network.edges() {
            return Err(NerfError::InvalidNetwork(
                "combined network restricted to the training nodes differs from the training network".into(),
            ));
        }
        let l = build_laplacian(combined, self.config.lambda_l)?;
        CohesiveExtension::new(&l.matrix, train_indices)
    }

    /// Transformed blocks for nodes of a combined network. `features` holds
    /// raw (uncentered) rows either for every combined node or for the
    /// non-training nodes only (ascending node id).
    pub fn transform_nodes(
        &self,
        features: &DMatrix<f64>,
        combined: &Network,
        train_indices: &[usize],
    ) -> Result<NodeBlocks> {
        let ext = self.extension(combined, train_indices)?;
        let n_all = combined.n_nodes();
        let node_indices: Vec<usize> = if features.nrows() == n_all {
            (0..n_all).collect()
        } else if features.nrows() == ext.n_test() {
            ext.test_indices.clone()
        } else {
            return Err(NerfError::DimensionMismatch(format!(
                "{} feature rows; expected {} (all nodes) or {} (new nodes)",
                features.nrows(),
                n_all,
                ext.n_test()
            )));
        };
        let centered = center_with(features, &self.column_means)?;
        // position of each combined node among the training or new nodes
        let mut slot = vec![(false, 0usize); n_all];
        for (k, &i) in ext.train_indices.iter().enumerate() {
            slot[i] = (true, k);
        }
        for (k, &i) in ext.test_indices.iter().enumerate() {
            slot[i] = (false, k);
        }
        let pick = |train: &DVector<f64>, new: &DVector<f64>| {
            DVector::from_iterator(
                node_indices.len(),
                node_indices.iter().map(|&i| match slot[i] {
                    (true, k) => train[k],
                    (false, k) => new[k],
                }),
            )
        };
        let extended = match &self.embedding {
            None => centered,
            Some(e) => {
                let z_new = ext.apply_matrix(&e.coordinates)?;
                let z = DMatrix::from_fn(node_indices.len(), e.r, |a, c| match slot[node_indices[a]] {
                    (true, k) => e.coordinates[(k, c)],
                    (false, k) => z_new[(k, c)],
                });
                hstack(&[&centered, &z])?
            }
        };
        let alpha = self
            .trees
            .par_iter()
            .map(|t| {
                if t.alpha.is_empty() {
                    Ok(DVector::zeros(0))
                } else {
                    Ok(pick(&t.alpha, &ext.apply(&t.alpha)?))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let stumps = self
            .forest
            .trees
            .par_iter()
            .map(|tree| tree.stump_features(&extended))
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeBlocks {
            extended,
            alpha,
            stumps,
            node_indices,
        })
    }

    /// Per-tree, per-group contributions for transformed rows.
    pub fn decompose(&self, blocks: &NodeBlocks) -> Result<Decomposition> {
        let p = self.n_features();
        if blocks.extended.ncols() != p + self.embedding_dim() || blocks.stumps.len() != self.n_trees() {
            return Err(NerfError::DimensionMismatch("blocks do not match the model".into()));
        }
        let rows = blocks.n_rows();
        let lin_groups: Vec<usize> = self
            .linear_features
            .iter()
            .map(|&c| group_column(self.extended_group(c), p))
            .collect();
        let (per_tree, tree_means): (Vec<_>, Vec<_>) = self
            .trees
            .par_iter()
            .zip(&self.forest.trees)
            .enumerate()
            .map(|(t, (fit, tree))| {
                let stump_groups: Vec<usize> = tree
                    .splits
                    .iter()
                    .map(|s| group_column(self.extended_group(s.feature), p))
                    .collect();
                let mut c = DMatrix::zeros(rows, p + 2);
                let mut m = DVector::zeros(p + 2);
                for (j, &col) in self.linear_features.iter().enumerate() {
                    let g = lin_groups[j];
                    let b = fit.beta[j];
                    for i in 0..rows {
                        c[(i, g)] += blocks.extended[(i, col)] * b;
                    }
                    m[g] += fit.means.linear[j] * b;
                }
                let psi = &blocks.stumps[t];
                for (s, &g) in stump_groups.iter().enumerate() {
                    let w = fit.gamma[s];
                    for i in 0..rows {
                        c[(i, g)] += psi[(i, s)] * w;
                    }
                    m[g] += fit.means.stump[s] * w;
                }
                if !fit.alpha.is_empty() {
                    for i in 0..rows {
                        c[(i, p)] = blocks.alpha[t][i];
                    }
                    m[p] = fit.means.alpha;
                }
                (c, m)
            })
            .unzip();
        Ok(Decomposition {
            n_features: p,
            per_tree,
            tree_means,
            response_mean: self.response_mean,
        })
    }

    pub fn predict_blocks(&self, blocks: &NodeBlocks) -> Result<PredictionResult> {
        let d = self.decompose(blocks)?;
        let agg = d.aggregate();
        let p = self.n_features();
        let feature_part = DVector::from_fn(agg.nrows(), |i, _| agg.row(i).columns(0, p).sum());
        let cohesion_part = agg.column(p).into_owned();
        let embedding_part = agg.column(p + 1).into_owned();
        let predictions = (&feature_part + &cohesion_part + &embedding_part).add_scalar(self.response_mean);
        Ok(PredictionResult {
            node_indices: blocks.node_indices.clone(),
            predictions,
            cohesion_part,
            embedding_part,
            feature_part,
        })
    }

    /// In-sample predictions for the training nodes.
    pub fn predict_training(&self) -> Result<PredictionResult> {
        self.predict_blocks(&self.training_blocks()?)
    }

    /// Predictions for nodes of a combined network (see [`Self::transform_nodes`]).
    pub fn predict(
        &self,
        features: &DMatrix<f64>,
        combined: &Network,
        train_indices: &[usize],
    ) -> Result<PredictionResult> {
        self.predict_blocks(&self.transform_nodes(features, combined, train_indices)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from_model(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| NerfError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| NerfError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct CenteringFile {
    column_means: Vec<f64>,
    response_mean: f64,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    eigenvalues: Vec<f64>,
    coordinates: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    root: Child,
    splits: Vec<SplitNode>,
    leaf_means: Vec<f64>,
    in_bag: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    penalty: PenaltySpec,
    means: ColumnMeans,
}

#[derive(Serialize, Deserialize)]
struct TrainingFile {
    feature_names: Vec<String>,
    features: Vec<Vec<f64>>,
    response: Vec<f64>,
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config: NerfPlusConfig,
    centering: CenteringFile,
    embedding: Option<EmbeddingFile>,
    linear_features: Vec<usize>,
    trees: Vec<TreeFile>,
    training: TrainingFile,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(NerfError::InvalidInput(format!("ragged {what} matrix in model file")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    fn from_model(m: &NerfPlusModel) -> Self {
        ModelFile {
            version: MODEL_VERSION,
            config: m.config.clone(),
            centering: CenteringFile {
                column_means: m.column_means.clone(),
                response_mean: m.response_mean,
            },
            embedding: m.embedding.as_ref().map(|e| EmbeddingFile {
                eigenvalues: e.eigenvalues.iter().copied().collect(),
                coordinates: matrix_rows(&e.coordinates),
            }),
            linear_features: m.linear_features.clone(),
            trees: m
                .trees
                .iter()
                .zip(&m.forest.trees)
                .zip(&m.forest.in_bag_indices)
                .map(|((fit, tree), in_bag)| TreeFile {
                    root: tree.root,
                    splits: tree.splits.clone(),
                    leaf_means: tree.leaf_means.clone(),
                    in_bag: in_bag.clone(),
                    alpha: fit.alpha.iter().copied().collect(),
                    beta: fit.beta.iter().copied().collect(),
                    gamma: fit.gamma.iter().copied().collect(),
                    penalty: fit.penalty,
                    means: fit.means.clone(),
                })
                .collect(),
            training: TrainingFile {
                feature_names: m.feature_names.clone(),
                features: matrix_rows(&m.train_features),
                response: m.train_response.iter().copied().collect(),
                n_nodes: m.network.n_nodes(),
                edges: m.network.edges().to_vec(),
            },
        }
    }

    fn into_model(self) -> Result<NerfPlusModel> {
        let invalid = |m: &str| NerfError::InvalidInput(format!("invalid model file: {m}"));
        if self.version != MODEL_VERSION {
            return Err(invalid(&format!("unsupported version {}", self.version)));
        }
        self.config.validate()?;
        let p = self.centering.column_means.len();
        let n = self.training.response.len();
        let train_features = matrix_from_rows(&self.training.features, p, "training feature")?;
        if train_features.nrows() != n || self.training.n_nodes != n || self.training.feature_names.len() != p {
            return Err(invalid("training data dimensions disagree"));
        }
        let network = Network::new(n, self.training.edges.iter().copied())?;
        let laplacian = build_laplacian(&network, self.config.lambda_l)?;
        let embedding = match self.embedding {
            None => None,
            Some(e) => {
                let r = e.eigenvalues.len();
                let coordinates = matrix_from_rows(&e.coordinates, r, "embedding")?;
                if coordinates.nrows() != n {
                    return Err(invalid("embedding rows disagree with training size"));
                }
                Some(SpectralEmbedding {
                    coordinates,
                    eigenvalues: DVector::from_vec(e.eigenvalues),
                    r,
                    skip_trivial: true,
                })
            }
        };
        let width = p + embedding.as_ref().map_or(0, |e| e.r);
        if self.linear_features.iter().any(|&c| c >= width) {
            return Err(invalid("linear feature index out of range"));
        }
        let q = self.linear_features.len();
        let mut trees = Vec::with_capacity(self.trees.len());
        let mut fits = Vec::with_capacity(self.trees.len());
        let mut in_bag_indices = Vec::with_capacity(self.trees.len());
        for tf in self.trees {
            let tree = FittedTree {
                root: tf.root,
                splits: tf.splits,
                leaf_means: tf.leaf_means,
                n_features: width,
            };
            tree.validate()?;
            let m_t = tree.n_splits();
            if tf.beta.len() != q
                || tf.gamma.len() != m_t
                || tf.means.linear.len() != q
                || tf.means.stump.len() != m_t
                || !(tf.alpha.is_empty() || tf.alpha.len() == n)
                || tf.in_bag.iter().any(|&i| i >= n)
            {
                return Err(invalid("tree coefficient lengths disagree"));
            }
            tf.penalty.validate()?;
            fits.push(TreeFit {
                alpha: DVector::from_vec(tf.alpha),
                beta: DVector::from_vec(tf.beta),
                gamma: DVector::from_vec(tf.gamma),
                penalty: tf.penalty,
                means: tf.means,
            });
            trees.push(tree);
            in_bag_indices.push(tf.in_bag);
        }
        if trees.is_empty() {
            return Err(invalid("no trees"));
        }
        let config = self.config;
        Ok(NerfPlusModel {
            forest: Forest {
                trees,
                in_bag_indices,
                seed: config.seed,
                params: config.forest_params(),
            },
            config,
            feature_names: self.training.feature_names,
            column_means: self.centering.column_means,
            response_mean: self.centering.response_mean,
            embedding,
            linear_features: self.linear_features,
            trees: fits,
            train_features,
            train_response: DVector::from_vec(self.training.response),
            network,
            laplacian,
        })
    }
}
