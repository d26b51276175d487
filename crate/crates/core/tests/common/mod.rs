#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nerfplus::data::{Dataset, Network};
use nerfplus::ridge::{PenaltyGrid, PenaltySpec};
use nerfplus::sim::gen_sbm;
use nerfplus::NerfPlusConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Ring plus random chords with weights in [0.5, 2].
pub fn random_network(n: usize, extra: f64, rng: &mut ChaCha8Rng) -> Network {
    let mut edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    if n == 2 {
        edges.truncate(1);
    }
    for i in 0..n {
        for j in i + 2..n {
            if !(i == 0 && j == n - 1) && rng.random::<f64>() < extra {
                edges.push((i, j, rng.random_range(0.5..2.0)));
            }
        }
    }
    Network::new(n, edges).unwrap()
}

/// Three-block SBM with node effects by block, plus a signal on x0.
pub fn block_dataset(n: usize, p: usize, seed: u64) -> (Dataset, Network) {
    let mut r = rng(seed);
    let g = gen_sbm(n, 3, 0.3, 0.02, &mut r).unwrap();
    let x = gaussian(n, p, &mut r);
    let y = DVector::from_fn(n, |i, _| {
        let block = (i * 3 / n) as f64 - 1.0;
        1.5 * block + x[(i, 0)] + 0.3 * r.sample::<f64, _>(StandardNormal)
    });
    (Dataset::new(x, y).unwrap(), g)
}

pub fn fast_config(n_trees: usize) -> NerfPlusConfig {
    NerfPlusConfig {
        n_trees,
        trees_to_tune: 2.min(n_trees),
        penalty_grid: PenaltyGrid {
            lambda_alpha: vec![0.1, 1.0, 10.0],
            lambda_beta: vec![0.1, 10.0],
            lambda_gamma: vec![0.1, 10.0],
        },
        ..Default::default()
    }
}

pub fn fixed_config(n_trees: usize, a: f64, b: f64, c: f64) -> NerfPlusConfig {
    NerfPlusConfig {
        n_trees,
        trees_to_tune: 1,
        penalty_grid: PenaltyGrid::fixed(PenaltySpec::new(a, b, c).unwrap()),
        ..Default::default()
    }
}

/// Splits `network` into sorted train / test node lists (every `k`-th node
/// is a test node).
pub fn split_every(n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let test: Vec<usize> = (0..n).filter(|i| i % k == k - 1).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % k != k - 1).collect();
    (train, test)
}

pub fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |a, j| m[(idx[a], j)])
}

pub fn entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
