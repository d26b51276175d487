//! Laplacian spectral embedding of the training nodes.

use nalgebra::{DMatrix, DVector};

use crate::data::Laplacian;
use crate::error::{NerfError, Result};
use crate::linalg::sym_eigen;
use crate::ridge::CohesiveExtension;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// n × r.
    pub coordinates: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub r: usize,
    pub skip_trivial: bool,
}

/// Eigenvectors for the `r` smallest eigenvalues of `L`, skipping the first.
pub fn spectral_embedding(laplacian: &Laplacian, r: usize) -> Result<SpectralEmbedding> {
    let n = laplacian.n_nodes();
    if r == 0 || r >= n {
        return Err(NerfError::InvalidInput(format!(
            "embedding dimension must satisfy 1 <= r < n, got r = {r}, n = {n}"
        )));
    }
    let eig = sym_eigen(&laplacian.matrix)?;
    Ok(SpectralEmbedding {
        coordinates: eig.vectors.columns(1, r).into_owned(),
        eigenvalues: eig.values.rows(1, r).into_owned(),
        r,
        skip_trivial: true,
    })
}

/// Extends each embedding column to the nodes of `combined_laplacian` that
/// are not in `train_indices` (ascending order) with the cohesive rule.
pub fn extend_embedding(
    training: &SpectralEmbedding,
    combined_laplacian: &Laplacian,
    train_indices: &[usize],
) -> Result<DMatrix<f64>> {
    CohesiveExtension::new(&combined_laplacian.matrix, train_indices)?.apply_matrix(&training.coordinates)
}
