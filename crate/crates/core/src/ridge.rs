//! Generalized ridge regression with a network-cohesion block.
//!
//! For one tree the coefficients `ν = (α, β, γ)` minimize
//!
//! ```text
//! ‖y − α − X̃β − Ψγ‖² + λ_α α′Lα + λ_β‖β‖² + λ_γ‖γ‖²
//! ```
//!
//! which is `ν = (W′W + M)⁻¹W′y` with `W = [I, X̃, Ψ]` and the block-diagonal
//! penalty `M`. [`solve`] evaluates that closed form directly. The fitting
//! pipeline uses [`solve_profiled`], which eliminates `α` through the
//! eigendecomposition of `L` so that many penalty values can be tried
//! against one factorization.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{cross_submatrix, principal_submatrix, Laplacian};
use crate::error::{NerfError, Result};
use crate::linalg::{cholesky, entries_of, hstack, rows_of, sym_eigen, SymEigen};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
}

impl PenaltySpec {
    pub fn new(lambda_alpha: f64, lambda_beta: f64, lambda_gamma: f64) -> Result<Self> {
        let spec = PenaltySpec {
            lambda_alpha,
            lambda_beta,
            lambda_gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_alpha", self.lambda_alpha),
            ("lambda_beta", self.lambda_beta),
            ("lambda_gamma", self.lambda_gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(NerfError::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn zero_penalties(&self, layout: &BlockLayout) -> Vec<&'static str> {
        let mut out = Vec::new();
        if layout.n_alpha > 0 && self.lambda_alpha == 0.0 {
            out.push("lambda_alpha");
        }
        if layout.n_linear > 0 && self.lambda_beta == 0.0 {
            out.push("lambda_beta");
        }
        if layout.n_stump > 0 && self.lambda_gamma == 0.0 {
            out.push("lambda_gamma");
        }
        out
    }
}

/// Widths of the node-effect, linear and stump coefficient blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub n_alpha: usize,
    pub n_linear: usize,
    pub n_stump: usize,
}

impl BlockLayout {
    pub fn width(&self) -> usize {
        self.n_alpha + self.n_linear + self.n_stump
    }
}

/// `[I_n, linear, stump]`; `identity_width = 0` omits the node-effect block.
pub fn build_design(
    identity_width: usize,
    linear_block: &DMatrix<f64>,
    stump_block: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, BlockLayout)> {
    let n = linear_block.nrows();
    if stump_block.nrows() != n {
        return Err(NerfError::DimensionMismatch(format!(
            "linear block has {n} rows, stump block {}",
            stump_block.nrows()
        )));
    }
    if identity_width != 0 && identity_width != n {
        return Err(NerfError::DimensionMismatch(format!(
            "identity block width {identity_width} does not match {n} rows"
        )));
    }
    let eye = DMatrix::identity(n, identity_width);
    let w = hstack(&[&eye, linear_block, stump_block])?;
    Ok((
        w,
        BlockLayout {
            n_alpha: identity_width,
            n_linear: linear_block.ncols(),
            n_stump: stump_block.ncols(),
        },
    ))
}

/// Block-diagonal penalty `diag(λ_α L, λ_β I_q, λ_γ I_m)`.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub matrix: DMatrix<f64>,
    pub layout: BlockLayout,
    pub spec: PenaltySpec,
}

/// Builds `M`; passing no Laplacian omits the node-effect block.
pub fn build_penalty(
    laplacian: Option<&DMatrix<f64>>,
    spec: &PenaltySpec,
    q: usize,
    m_t: usize,
) -> Result<Penalty> {
    spec.validate()?;
    let n = laplacian.map_or(0, |l| l.nrows());
    let layout = BlockLayout {
        n_alpha: n,
        n_linear: q,
        n_stump: m_t,
    };
    let d = layout.width();
    let mut m = DMatrix::zeros(d, d);
    if let Some(l) = laplacian {
        m.view_mut((0, 0), (n, n)).copy_from(&(l * spec.lambda_alpha));
    }
    for j in 0..q {
        m[(n + j, n + j)] = spec.lambda_beta;
    }
    for j in 0..m_t {
        m[(n + q + j, n + q + j)] = spec.lambda_gamma;
    }
    Ok(Penalty {
        matrix: m,
        layout,
        spec: *spec,
    })
}

#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub nu: DVector<f64>,
    pub layout: BlockLayout,
    pub gram_inverse: Option<DMatrix<f64>>,
}

impl RidgeSolution {
    pub fn alpha(&self) -> DVector<f64> {
        self.nu.rows(0, self.layout.n_alpha).into_owned()
    }

    pub fn beta(&self) -> DVector<f64> {
        self.nu.rows(self.layout.n_alpha, self.layout.n_linear).into_owned()
    }

    pub fn gamma(&self) -> DVector<f64> {
        self.nu
            .rows(self.layout.n_alpha + self.layout.n_linear, self.layout.n_stump)
            .into_owned()
    }
}

/// `ν = (W′W + M)⁻¹W′y` by Cholesky; optionally keeps `B⁻¹`.
pub fn solve(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    penalty: &Penalty,
    cache_inverse: bool,
) -> Result<RidgeSolution> {
    let d = penalty.layout.width();
    if design.ncols() != d || design.nrows() != response.len() {
        return Err(NerfError::DimensionMismatch(format!(
            "design is {}x{}, penalty expects {d} columns and response has {} rows",
            design.nrows(),
            design.ncols(),
            response.len()
        )));
    }
    let b = design.tr_mul(design) + &penalty.matrix;
    let chol = cholesky(b, "W'W + M").map_err(|_| singular_message(&penalty.spec, &penalty.layout))?;
    let nu = chol.solve(&design.tr_mul(response));
    let gram_inverse = cache_inverse.then(|| chol.inverse());
    Ok(RidgeSolution {
        nu,
        layout: penalty.layout,
        gram_inverse,
    })
}

fn singular_message(spec: &PenaltySpec, layout: &BlockLayout) -> NerfError {
    let zeros = spec.zero_penalties(layout);
    if zeros.is_empty() {
        NerfError::Singular("W'W + M is not positive definite".into())
    } else {
        NerfError::Singular(format!(
            "W'W + M is not positive definite; zero penalty: {}",
            zeros.join(", ")
        ))
    }
}

/// Evaluates the penalized least-squares objective at `nu`.
pub fn objective(design: &DMatrix<f64>, response: &DVector<f64>, penalty: &Penalty, nu: &DVector<f64>) -> f64 {
    let r = response - design * nu;
    r.norm_squared() + nu.dot(&(&penalty.matrix * nu))
}

/// Maximally cohesive extension of node values from training to test nodes:
/// `v₂ = −L₂₂⁻¹ L₂₁ v₁` on a combined Laplacian.
#[derive(Debug, Clone)]
pub struct CohesiveExtension {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// `−L₂₂⁻¹L₂₁`, n₂ × n₁.
    pub operator: DMatrix<f64>,
}

impl CohesiveExtension {
    pub fn new(combined: &DMatrix<f64>, train_indices: &[usize]) -> Result<Self> {
        let n = combined.nrows();
        let mut is_train = vec![false; n];
        for &i in train_indices {
            if i >= n {
                return Err(NerfError::InvalidInput(format!(
                    "training node {i} outside combined network of {n} nodes"
                )));
            }
            if is_train[i] {
                return Err(NerfError::InvalidInput(format!("training node {i} listed twice")));
            }
            is_train[i] = true;
        }
        let test_indices: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
        let operator = if test_indices.is_empty() {
            DMatrix::zeros(0, train_indices.len())
        } else {
            let l22 = principal_submatrix(combined, &test_indices);
            let l21 = cross_submatrix(combined, &test_indices, train_indices);
            let chol = cholesky(l22, "test-node Laplacian block").map_err(|_| {
                NerfError::Singular(
                    "test-node Laplacian block is singular (a test component has no training attachment)"
                        .into(),
                )
            })?;
            -chol.solve(&l21)
        };
        Ok(CohesiveExtension {
            train_indices: train_indices.to_vec(),
            test_indices,
            operator,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_indices.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_indices.len()
    }

    pub fn apply(&self, train_values: &DVector<f64>) -> Result<DVector<f64>> {
        if train_values.len() != self.n_train() {
            return Err(NerfError::DimensionMismatch(format!(
                "{} training values for {} training nodes",
                train_values.len(),
                self.n_train()
            )));
        }
        Ok(&self.operator * train_values)
    }

    pub fn apply_matrix(&self, train_values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if train_values.nrows() != self.n_train() {
            return Err(NerfError::DimensionMismatch(format!(
                "{} training rows for {} training nodes",
                train_values.nrows(),
                self.n_train()
            )));
        }
        Ok(&self.operator * train_values)
    }
}

/// Test-node effects minimizing the combined cohesion `(α₁, α₂)′L′(α₁, α₂)`.
/// Test nodes are the combined-network nodes not in `train_indices`, in
/// ascending order.
pub fn extend_node_effects(
    alpha_train: &DVector<f64>,
    combined: &Laplacian,
    train_indices: &[usize],
) -> Result<DVector<f64>> {
    CohesiveExtension::new(&combined.matrix, train_indices)?.apply(alpha_train)
}

/// Solves the ridge problem with `α` profiled out through the spectrum of
/// the Laplacian (`basis`); without a basis there is no node-effect block.
/// `features` is `[linear, stump]` with `q` linear columns. Returns
/// `(α, [β; γ])`.
pub fn solve_profiled(
    basis: Option<&SymEigen>,
    features: &DMatrix<f64>,
    response: &DVector<f64>,
    q: usize,
    spec: &PenaltySpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.validate()?;
    let d = features.ncols();
    let layout = BlockLayout {
        n_alpha: basis.map_or(0, |b| b.values.len()),
        n_linear: q,
        n_stump: d - q,
    };
    let ridge = ridge_diagonal(d, q, spec);
    match basis {
        None => {
            let theta = if d == 0 {
                DVector::zeros(0)
            } else {
                let a = features.tr_mul(features) + DMatrix::from_diagonal(&ridge);
                cholesky(a, "ridge system")
                    .map_err(|_| singular_message(spec, &layout))?
                    .solve(&features.tr_mul(response))
            };
            Ok((DVector::zeros(0), theta))
        }
        Some(basis) => {
            let u = &basis.vectors;
            let g = u.tr_mul(features);
            let y_rot = u.tr_mul(response);
            let (shrink, keep) = cohesion_weights(&basis.values, spec.lambda_alpha);
            let theta = if d == 0 {
                DVector::zeros(0)
            } else {
                let kg = scale_rows(&g, &keep);
                let a = g.tr_mul(&kg) + DMatrix::from_diagonal(&ridge);
                let rhs = kg.tr_mul(&y_rot);
                cholesky(a, "profiled ridge system")
                    .map_err(|_| singular_message(spec, &layout))?
                    .solve(&rhs)
            };
            let resid = &y_rot - &g * &theta;
            let alpha = u * resid.component_mul(&shrink);
            Ok((alpha, theta))
        }
    }
}

fn ridge_diagonal(d: usize, q: usize, spec: &PenaltySpec) -> DVector<f64> {
    DVector::from_fn(d, |j, _| if j < q { spec.lambda_beta } else { spec.lambda_gamma })
}

/// Per-eigenmode `(1/(1+λμ), λμ/(1+λμ))`.
fn cohesion_weights(eigenvalues: &DVector<f64>, lambda_alpha: f64) -> (DVector<f64>, DVector<f64>) {
    let shrink = eigenvalues.map(|mu| 1.0 / (1.0 + lambda_alpha * mu));
    let keep = shrink.map(|s| 1.0 - s);
    (shrink, keep)
}

fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

/// Candidate penalty values for grid-search cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyGrid {
    pub lambda_alpha: Vec<f64>,
    pub lambda_beta: Vec<f64>,
    pub lambda_gamma: Vec<f64>,
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        let values = log_space(1e-4, 1e3, 10);
        PenaltyGrid {
            lambda_alpha: values.clone(),
            lambda_beta: values.clone(),
            lambda_gamma: values,
        }
    }
}

impl PenaltyGrid {
    pub fn fixed(spec: PenaltySpec) -> Self {
        PenaltyGrid {
            lambda_alpha: vec![spec.lambda_alpha],
            lambda_beta: vec![spec.lambda_beta],
            lambda_gamma: vec![spec.lambda_gamma],
        }
    }

    pub fn is_singleton(&self) -> bool {
        self.lambda_alpha.len() == 1 && self.lambda_beta.len() == 1 && self.lambda_gamma.len() == 1
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("lambda_alpha", &self.lambda_alpha),
            ("lambda_beta", &self.lambda_beta),
            ("lambda_gamma", &self.lambda_gamma),
        ] {
            if g.is_empty() {
                return Err(NerfError::InvalidInput(format!("{name} grid is empty")));
            }
            if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(NerfError::InvalidInput(format!("{name} grid has invalid values")));
            }
        }
        Ok(())
    }

    fn sorted(&self) -> PenaltyGrid {
        let sort = |v: &Vec<f64>| {
            let mut v = v.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        PenaltyGrid {
            lambda_alpha: sort(&self.lambda_alpha),
            lambda_beta: sort(&self.lambda_beta),
            lambda_gamma: sort(&self.lambda_gamma),
        }
    }
}

/// `count` values logarithmically spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

struct Fold {
    train: Vec<usize>,
    held: Vec<usize>,
    /// Spectrum of the Laplacian restricted to `train`.
    basis: Option<SymEigen>,
    /// Cohesive extension to held-out nodes, pre-multiplied by the basis.
    extension_rotated: Option<DMatrix<f64>>,
}

/// Fold split and per-fold factorizations, shared by every tree tuned with
/// the same training network.
pub struct CvPlan {
    n: usize,
    folds: Vec<Fold>,
}

impl CvPlan {
    /// Random `k`-fold split of `n` rows. With a Laplacian, held-out node
    /// effects come from the cohesive extension of the in-fold effects over
    /// the training Laplacian.
    pub fn new(n: usize, laplacian: Option<&Laplacian>, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 || folds > n {
            return Err(NerfError::InvalidInput(format!(
                "need 2 <= folds <= n, got {folds} folds for {n} samples"
            )));
        }
        if let Some(l) = laplacian {
            if l.n_nodes() != n {
                return Err(NerfError::DimensionMismatch(format!(
                    "Laplacian has {} nodes, data has {n} rows",
                    l.n_nodes()
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(seed, Domain::CvFolds, 0));
        let mut fold_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
        let folds = (0..folds)
            .map(|f| {
                let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                let (basis, extension_rotated) = match laplacian {
                    None => (None, None),
                    Some(l) => {
                        let basis = sym_eigen(&l.induced(&train))?;
                        let l_hh = l.restrict(&held);
                        let l_ht = cross_submatrix(&l.matrix, &held, &train);
                        let ext = -cholesky(l_hh, "held-out Laplacian block")?.solve(&l_ht);
                        let rotated = ext * &basis.vectors;
                        (Some(basis), Some(rotated))
                    }
                };
                Ok(Fold {
                    train,
                    held,
                    basis,
                    extension_rotated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CvPlan { n, folds })
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Total held-out squared error for every grid point, indexed
    /// `[alpha][beta][gamma]` over the sorted, de-duplicated grid.
    fn grid_errors(&self, features: &DMatrix<f64>, q: usize, response: &DVector<f64>, grid: &PenaltyGrid) -> Vec<f64> {
        let (na, nb, ng) = (grid.lambda_alpha.len(), grid.lambda_beta.len(), grid.lambda_gamma.len());
        let d = features.ncols();
        let mut errors = vec![0.0; na * nb * ng];
        for fold in &self.folds {
            let f_in = rows_of(features, &fold.train);
            let y_in = entries_of(response, &fold.train);
            let f_held = rows_of(features, &fold.held);
            let y_held = entries_of(response, &fold.held);
            let rotated = fold.basis.as_ref().map(|b| (b.vectors.tr_mul(&f_in), b.vectors.tr_mul(&y_in)));
            let alphas: &[f64] = if fold.basis.is_some() { &grid.lambda_alpha } else { &grid.lambda_alpha[..1] };
            for (ia, &la) in alphas.iter().enumerate() {
                // gram, rhs, held-out design, held-out offset
                let (gram, rhs, h, offset) = match (&fold.basis, &rotated, &fold.extension_rotated) {
                    (Some(basis), Some((g, y_rot)), Some(eu)) => {
                        let (shrink, keep) = cohesion_weights(&basis.values, la);
                        let kg = scale_rows(g, &keep);
                        let p = scale_columns(eu, &shrink);
                        (g.tr_mul(&kg), kg.tr_mul(y_rot), &f_held - &p * g, &p * y_rot)
                    }
                    _ => (f_in.tr_mul(&f_in), f_in.tr_mul(&y_in), f_held.clone(), DVector::zeros(fold.held.len())),
                };
                let target = &y_held - &offset;
                for (ib, &lb) in grid.lambda_beta.iter().enumerate() {
                    for (ig, &lg) in grid.lambda_gamma.iter().enumerate() {
                        let sse = if d == 0 {
                            target.norm_squared()
                        } else {
                            let mut a = gram.clone();
                            for j in 0..d {
                                a[(j, j)] += if j < q { lb } else { lg };
                            }
                            match nalgebra::Cholesky::new(a) {
                                Some(chol) => (&target - &h * chol.solve(&rhs)).norm_squared(),
                                None => f64::INFINITY,
                            }
                        };
                        if fold.basis.is_some() {
                            errors[(ia * nb + ib) * ng + ig] += sse;
                        } else {
                            for ia2 in 0..na {
                                errors[(ia2 * nb + ib) * ng + ig] += sse;
                            }
                        }
                    }
                }
            }
        }
        errors
    }
}

fn scale_columns(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= w[j];
    }
    out
}

/// Result of a grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvChoice {
    pub spec: PenaltySpec,
    /// Mean held-out squared error of the chosen spec (NaN when no search ran).
    pub cv_error: f64,
}

/// Exhaustive grid search over `plan`'s folds. Ties go to the smallest
/// `λ_α`, then `λ_β`, then `λ_γ`.
pub fn cv_tune_with_plan(
    plan: &CvPlan,
    features: &DMatrix<f64>,
    q: usize,
    response: &DVector<f64>,
    grid: &PenaltyGrid,
) -> Result<CvChoice> {
    grid.validate()?;
    if features.nrows() != plan.n || response.len() != plan.n || q > features.ncols() {
        return Err(NerfError::DimensionMismatch(
            "cross-validation inputs do not match the fold plan".into(),
        ));
    }
    let grid = grid.sorted();
    if grid.is_singleton() {
        return Ok(CvChoice {
            spec: PenaltySpec::new(grid.lambda_alpha[0], grid.lambda_beta[0], grid.lambda_gamma[0])?,
            cv_error: f64::NAN,
        });
    }
    let errors = plan.grid_errors(features, q, response, &grid);
    let (nb, ng) = (grid.lambda_beta.len(), grid.lambda_gamma.len());
    let mut best = 0;
    for (k, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = k;
        }
    }
    if !errors[best].is_finite() {
        return Err(NerfError::Singular(
            "every penalty grid point produced a singular system".into(),
        ));
    }
    let (ia, ib, ig) = (best / (nb * ng), (best / ng) % nb, best % ng);
    Ok(CvChoice {
        spec: PenaltySpec::new(grid.lambda_alpha[ia], grid.lambda_beta[ib], grid.lambda_gamma[ig])?,
        cv_error: errors[best] / plan.n as f64,
    })
}

/// Grid-search cross-validation of the penalty triple for the design
/// `[α-block if laplacian, features]` where `features = [linear | stump]`.
pub fn cv_tune(
    features: &DMatrix<f64>,
    q: usize,
    response: &DVector<f64>,
    laplacian: Option<&Laplacian>,
    grid: &PenaltyGrid,
    folds: usize,
    seed: u64,
) -> Result<CvChoice> {
    grid.validate()?;
    if grid.is_singleton() {
        return cv_tune_with_plan(
            &CvPlan {
                n: features.nrows(),
                folds: Vec::new(),
            },
            features,
            q,
            response,
            grid,
        );
    }
    let plan = CvPlan::new(features.nrows(), laplacian, folds, seed)?;
    cv_tune_with_plan(&plan, features, q, response, grid)
}
