//! Feature matrices, responses, weighted networks and their Laplacians.
//!
//! Features are read from comma-delimited text with a header row; responses
//! from a single column (an optional non-numeric header line is skipped).
//! Networks are whitespace/tab separated edge lists `src dst [weight]` with
//! 0-based node ids.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{NerfError, Result};

/// Feature matrix and response, optionally centered with stored means.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub response: DVector<f64>,
    pub column_means: Vec<f64>,
    pub response_mean: f64,
    pub is_centered: bool,
}

impl Dataset {
    /// Builds an uncentered dataset, checking shape and finiteness.
    pub fn new(features: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if features.nrows() != response.len() {
            return Err(NerfError::DimensionMismatch(format!(
                "{} feature rows but {} responses",
                features.nrows(),
                response.len()
            )));
        }
        if features.nrows() < 2 {
            return Err(NerfError::InvalidInput(
                "at least two samples are required".into(),
            ));
        }
        if features.ncols() < 1 {
            return Err(NerfError::InvalidInput(
                "at least one feature column is required".into(),
            ));
        }
        if features.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(NerfError::InvalidInput("non-finite value in dataset".into()));
        }
        let p = features.ncols();
        Ok(Dataset {
            features,
            response,
            column_means: vec![0.0; p],
            response_mean: 0.0,
            is_centered: false,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Shifts every column and the response to mean zero, storing the means.
    pub fn center(mut self) -> Result<Self> {
        if self.is_centered {
            return Err(NerfError::InvalidInput("dataset is already centered".into()));
        }
        let n = self.n_samples() as f64;
        for j in 0..self.n_features() {
            let mut col = self.features.column_mut(j);
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            self.column_means[j] = mean;
        }
        let mean = self.response.sum() / n;
        self.response.add_scalar_mut(-mean);
        self.response_mean = mean;
        self.is_centered = true;
        Ok(self)
    }

    /// Applies the stored column means to new rows with the same columns.
    pub fn center_features(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        center_with(features, &self.column_means)
    }

    /// Maps centered-scale predictions back to the response scale.
    pub fn uncenter_predictions(&self, predictions: &DVector<f64>) -> DVector<f64> {
        predictions.add_scalar(self.response_mean)
    }
}

pub(crate) fn center_with(features: &DMatrix<f64>, means: &[f64]) -> Result<DMatrix<f64>> {
    if features.ncols() != means.len() {
        return Err(NerfError::DimensionMismatch(format!(
            "expected {} feature columns, got {}",
            means.len(),
            features.ncols()
        )));
    }
    let mut out = features.clone();
    for (j, m) in means.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(-m);
    }
    Ok(out)
}

/// Undirected weighted network; edges are stored once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Network {
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b, w) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(NerfError::InvalidNetwork(format!(
                    "edge ({a}, {b}) references a node outside [0, {n_nodes})"
                )));
            }
            if a == b {
                return Err(NerfError::InvalidNetwork(format!("self-loop on node {a}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(NerfError::InvalidNetwork(format!(
                    "edge ({a}, {b}) has non-positive weight {w}"
                )));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(NerfError::InvalidNetwork(format!("duplicate edge ({i}, {j})")));
            }
            out.push((i, j, w));
        }
        Ok(Network {
            n_nodes,
            edges: out,
        })
    }

    pub fn empty(n_nodes: usize) -> Self {
        Network {
            n_nodes,
            edges: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes];
        for &(i, j, w) in &self.edges {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(i, j, w) in &self.edges {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    /// Subgraph induced by `nodes`, relabelled to positions in `nodes`.
    pub fn induced(&self, nodes: &[usize]) -> Result<Network> {
        let mut pos = vec![usize::MAX; self.n_nodes];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.n_nodes {
                return Err(NerfError::InvalidNetwork(format!("node {v} out of range")));
            }
            if pos[v] != usize::MAX {
                return Err(NerfError::InvalidInput(format!("node {v} listed twice")));
            }
            pos[v] = k;
        }
        let edges = self.edges.iter().filter_map(|&(i, j, w)| {
            (pos[i] != usize::MAX && pos[j] != usize::MAX).then_some((pos[i], pos[j], w))
        });
        Network::new(nodes.len(), edges)
    }

    /// Σ_edges w_ij (v_i − v_j)².
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j, w)| w * (v[i] - v[j]).powi(2))
            .sum()
    }
}

/// Dense regularized Laplacian `D − A + λ_L I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub matrix: DMatrix<f64>,
    pub lambda_l: f64,
}

impl Laplacian {
    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Principal submatrix on `idx` (degrees are kept as in the full graph).
    pub fn restrict(&self, idx: &[usize]) -> DMatrix<f64> {
        principal_submatrix(&self.matrix, idx)
    }

    /// Regularized Laplacian of the subgraph induced by `idx`: the principal
    /// submatrix with degrees recomputed from the kept edges only.
    pub fn induced(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut m = principal_submatrix(&self.matrix, idx);
        for a in 0..m.nrows() {
            let off: f64 = (0..m.ncols()).filter(|&b| b != a).map(|b| m[(a, b)]).sum();
            m[(a, a)] = self.lambda_l - off;
        }
        m
    }
}

pub(crate) fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

pub(crate) fn cross_submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn build_laplacian(network: &Network, lambda_l: f64) -> Result<Laplacian> {
    if !(lambda_l.is_finite() && lambda_l >= 0.0) {
        return Err(NerfError::InvalidInput(format!(
            "Laplacian regularization must be finite and >= 0, got {lambda_l}"
        )));
    }
    let n = network.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, w) in network.edges() {
        m[(i, j)] -= w;
        m[(j, i)] -= w;
        m[(i, i)] += w;
        m[(j, j)] += w;
    }
    for i in 0..n {
        m[(i, i)] += lambda_l;
    }
    Ok(Laplacian {
        matrix: m,
        lambda_l,
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| NerfError::io(path, e))
}

fn parse_finite(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let trimmed = cell.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(NerfError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-numeric value {trimmed:?}"),
        }),
    }
}

/// Reads a comma-delimited numeric matrix with a header row.
pub fn load_features(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => NerfError::io(path, io),
            other => NerfError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| NerfError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| NerfError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|c| parse_finite(path, line, c))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || header.is_empty() {
        return Err(NerfError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty feature file".into(),
        });
    }
    let p = header.len();
    if let Some(k) = rows.iter().position(|r| r.len() != p) {
        return Err(NerfError::Parse {
            path: path.to_path_buf(),
            line: k + 2,
            message: format!("expected {p} columns, found {}", rows[k].len()),
        });
    }
    let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    Ok((header, m))
}

/// Reads a single numeric column; a leading non-numeric line is a header.
pub fn load_response(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut values = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let cell = raw.trim();
        if cell.is_empty() {
            continue;
        }
        if values.is_empty() && k == 0 && cell.parse::<f64>().is_err() {
            continue;
        }
        values.push(parse_finite(path, k + 1, cell)?);
    }
    if values.is_empty() {
        return Err(NerfError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty response file".into(),
        });
    }
    Ok(DVector::from_vec(values))
}

pub fn load_dataset(features_path: impl AsRef<Path>, response_path: impl AsRef<Path>) -> Result<Dataset> {
    let (_, x) = load_features(features_path)?;
    let y = load_response(response_path)?;
    Dataset::new(x, y)
}

/// Reads an edge list `src dst [weight]`; `#` starts a comment line.
pub fn load_network(edge_path: impl AsRef<Path>, n_nodes: usize) -> Result<Network> {
    let path = edge_path.as_ref();
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(NerfError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("expected `src dst [weight]`, got {line:?}"),
            });
        }
        let node = |s: &str| {
            s.parse::<usize>().map_err(|_| NerfError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("invalid node index {s:?}"),
            })
        };
        let a = node(fields[0])?;
        let b = node(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => parse_finite(path, k + 1, s)?,
            None => 1.0,
        };
        edges.push((a, b, w));
    }
    Network::new(n_nodes, edges)
}

/// Writes an edge list in the format read by [`load_network`].
pub fn write_network(network: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for &(i, j, w) in network.edges() {
        s.push_str(&format!("{i}\t{j}\t{w}\n"));
    }
    fs::write(path, s).map_err(|e| NerfError::io(path, e))
}

/// Writes a matrix as comma-delimited text with header `x0,x1,...`.
pub fn write_features(features: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..features.ncols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header)?;
    for i in 0..features.nrows() {
        w.write_record(features.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| NerfError::io(path, e))
}

pub fn write_response(response: &DVector<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("y\n");
    for v in response.iter() {
        s.push_str(&format!("{v}\n"));
    }
    fs::write(path, s).map_err(|e| NerfError::io(path, e))
}
