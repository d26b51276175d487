//! Closed-form leave-one-out coefficients and sample influence.
//!
//! Dropping training sample `i` removes row `i` of the design, the node
//! effect `α_i` and row/column `i` of the penalty. Trees, stump features,
//! embeddings, the Laplacian and the penalties stay fixed, so the refit is a
//! rank-one update of the cached `B⁻¹ = (W′W + M)⁻¹` and costs `O(d)` per
//! sample once `B⁻¹W′` is known.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_laplacian, cross_submatrix, principal_submatrix, Network};
use crate::error::{NerfError, Result};
use crate::linalg::{columns_of, hstack};
use crate::model::{NerfPlusModel, NodeBlocks};
use crate::ridge::{build_design, build_penalty, solve, BlockLayout, Penalty};

/// Below this `1 − h_i` a sample is reported as un-droppable.
pub const LEVERAGE_GUARD: f64 = 1e-10;

/// Cached quantities for the leave-one-out updates of one ridge fit.
#[derive(Debug, Clone)]
pub struct LooWorkspace {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub layout: BlockLayout,
    pub gram_inverse: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub fitted: DVector<f64>,
    /// `B⁻¹W′`, d × n.
    solved_rows: DMatrix<f64>,
    pub leverages: DVector<f64>,
}

impl LooWorkspace {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, penalty: &Penalty) -> Result<Self> {
        let sol = solve(&design, &response, penalty, true)?;
        let gram_inverse = sol.gram_inverse.expect("inverse requested");
        let solved_rows = &gram_inverse * design.transpose();
        let fitted = &design * &sol.nu;
        let n = design.nrows();
        let n_alpha = penalty.layout.n_alpha;
        let leverages = DVector::from_fn(n, |i, _| {
            let h = design.row(i).transpose().dot(&solved_rows.column(i));
            if n_alpha == 0 {
                h
            } else {
                let ci = solved_rows[(i, i)];
                h - ci * ci / gram_inverse[(i, i)]
            }
        });
        Ok(LooWorkspace {
            design,
            response,
            layout: penalty.layout,
            gram_inverse,
            nu: sol.nu,
            fitted,
            solved_rows,
            leverages,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    /// `ν̂⁽⁻ⁱ⁾ − ν̂` in full coordinates (with node effects, entry `i` of the
    /// result brings `α_i` to zero).
    pub fn coefficient_shift(&self, i: usize) -> Result<DVector<f64>> {
        if i >= self.n_samples() {
            return Err(NerfError::InvalidInput(format!("sample {i} out of range")));
        }
        let c = self.solved_rows.column(i);
        let resid = self.fitted[i] - self.response[i];
        let h = self.leverages[i];
        if self.layout.n_alpha == 0 {
            if 1.0 - h < LEVERAGE_GUARD {
                return Err(NerfError::Undroppable { index: i, leverage: h });
            }
            return Ok(c * (resid / (1.0 - h)));
        }
        let b = self.gram_inverse.column(i);
        let bii = b[i];
        if bii <= 0.0 {
            return Err(NerfError::Singular(format!(
                "diagonal entry {i} of the inverse Gram matrix is not positive"
            )));
        }
        if 1.0 - h < LEVERAGE_GUARD {
            return Err(NerfError::Undroppable { index: i, leverage: h });
        }
        let ci = c[i];
        let u = c - b * (ci / bii);
        let alpha_i = self.nu[i];
        Ok(&u * (resid / (1.0 - h)) - (b + &u * (ci / (1.0 - h))) * (alpha_i / bii))
    }
}

/// Leave-one-out coefficients for sample `i`; with node effects, `α_i` is
/// removed so the result has length `d − 1`.
pub fn loo_coefficients(workspace: &LooWorkspace, i: usize) -> Result<DVector<f64>> {
    let full = &workspace.nu + workspace.coefficient_shift(i)?;
    if workspace.layout.n_alpha == 0 {
        return Ok(full);
    }
    Ok(full.remove_row(i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// Mean squared shift of the evaluation predictions when sample `i` is
    /// dropped; `+∞` for un-droppable samples.
    pub scores: Vec<f64>,
    /// 1 = most influential; ties broken by sample index.
    pub ranks: Vec<usize>,
    pub flagged: Vec<bool>,
}

impl InfluenceReport {
    pub fn from_scores(scores: Vec<f64>, flagged: Vec<bool>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; scores.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        InfluenceReport { scores, ranks, flagged }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("sample_index,score,rank\n");
        for (i, (s, r)) in self.scores.iter().zip(&self.ranks).enumerate() {
            text.push_str(&format!("{i},{s},{r}\n"));
        }
        fs::write(path, text).map_err(|e| NerfError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InfluenceOptions {
    /// Use only the first `k` trees.
    pub max_trees: Option<usize>,
}

/// Influence of each training sample on the predictions for the nodes of a
/// combined network. `features` follows [`NerfPlusModel::transform_nodes`].
pub fn sample_influence(
    model: &NerfPlusModel,
    features: &DMatrix<f64>,
    combined: &Network,
    train_indices: &[usize],
    options: InfluenceOptions,
) -> Result<InfluenceReport> {
    let blocks = model.transform_nodes(features, combined, train_indices)?;
    let ext = model.extension(combined, train_indices)?;
    let n = model.n_train();
    // α-part of each evaluation row as a linear map of the training α
    let mut pos = vec![None; combined.n_nodes()];
    for (k, &i) in train_indices.iter().enumerate() {
        pos[i] = Some(k);
    }
    let mut test_pos = vec![0; combined.n_nodes()];
    for (k, &i) in ext.test_indices.iter().enumerate() {
        test_pos[i] = k;
    }
    let row_map = DMatrix::from_fn(blocks.n_rows(), n, |a, k| match pos[blocks.node_indices[a]] {
        Some(j) => (j == k) as u8 as f64,
        None => ext.operator[(test_pos[blocks.node_indices[a]], k)],
    });
    let schur = if model.has_node_effects() {
        let l = build_laplacian(combined, model.config.lambda_l)?;
        let l11 = principal_submatrix(&l.matrix, train_indices);
        let l12 = cross_submatrix(&l.matrix, train_indices, &ext.test_indices);
        Some(l11 + l12 * &ext.operator)
    } else {
        None
    };
    influence_from_blocks(model, &blocks, &row_map, schur.as_ref(), options)
}

/// Core of [`sample_influence`]. `row_map` maps training node effects to the
/// evaluation rows' node effects; `schur` is the Schur complement of the
/// combined Laplacian onto the training nodes, used to re-extend the node
/// effect of a dropped sample.
pub fn influence_from_blocks(
    model: &NerfPlusModel,
    blocks: &NodeBlocks,
    row_map: &DMatrix<f64>,
    schur: Option<&DMatrix<f64>>,
    options: InfluenceOptions,
) -> Result<InfluenceReport> {
    let n = model.n_train();
    let t_used = options.max_trees.map_or(model.n_trees(), |k| k.clamp(1, model.n_trees()));
    let train = model.training_blocks()?;
    let with_alpha = model.has_node_effects();
    if with_alpha && schur.is_none() {
        return Err(NerfError::InvalidInput("node effects need the Schur complement".into()));
    }
    let train_linear = columns_of(&train.extended, &model.linear_features);
    let eval_linear = columns_of(&blocks.extended, &model.linear_features);
    let per_tree = (0..t_used)
        .into_par_iter()
        .map(|t| {
            let fit = &model.trees[t];
            let f_train = hstack(&[&train_linear, &train.stumps[t]])?;
            let f_eval = hstack(&[&eval_linear, &blocks.stumps[t]])?;
            let q = model.linear_features.len();
            let m_t = f_train.ncols() - q;
            let (w, _) = build_design(
                if with_alpha { n } else { 0 },
                &f_train.columns(0, q).into_owned(),
                &f_train.columns(q, m_t).into_owned(),
            )?;
            let lap = with_alpha.then(|| &model.laplacian().matrix);
            let penalty = build_penalty(lap, &fit.penalty, q, m_t)?;
            let ws = LooWorkspace::new(w, model.train_response.clone(), &penalty)?;
            let n_alpha = ws.layout.n_alpha;
            let mut flagged = vec![false; n];
            let mut alpha_shift = DMatrix::zeros(n_alpha, n);
            let mut theta_shift = DMatrix::zeros(f_train.ncols(), n);
            for i in 0..n {
                let delta = match ws.coefficient_shift(i) {
                    Ok(d) => d,
                    Err(NerfError::Undroppable { .. }) => {
                        flagged[i] = true;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if let Some(s) = schur {
                    let alpha_new = ws.nu.rows(0, n) + delta.rows(0, n);
                    let mut acc = 0.0;
                    for k in 0..n {
                        if k != i {
                            acc += s[(i, k)] * alpha_new[k];
                        }
                    }
                    let mut col = delta.rows(0, n).into_owned();
                    col[i] = -acc / s[(i, i)] - ws.nu[i];
                    alpha_shift.set_column(i, &col);
                }
                theta_shift.set_column(i, &delta.rows(n_alpha, f_train.ncols()));
            }
            let mut shift = &f_eval * theta_shift;
            if n_alpha > 0 {
                shift += row_map * alpha_shift;
            }
            Ok((shift, flagged))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = DMatrix::zeros(blocks.n_rows(), n);
    let mut flagged = vec![false; n];
    for (shift, f) in &per_tree {
        total += shift;
        for i in 0..n {
            flagged[i] |= f[i];
        }
    }
    total /= t_used as f64;
    let rows = blocks.n_rows().max(1) as f64;
    let scores = (0..n)
        .map(|i| {
            if flagged[i] {
                f64::INFINITY
            } else {
                total.column(i).norm_squared() / rows
            }
        })
        .collect();
    Ok(InfluenceReport::from_scores(scores, flagged))
}
