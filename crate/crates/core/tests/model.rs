mod common;

use nalgebra::DMatrix;
use nerfplus::data::{build_laplacian, Dataset, Network};
use nerfplus::embedding::spectral_embedding;
use nerfplus::model::Group;
use nerfplus::ridge::{PenaltyGrid, PenaltySpec};
use nerfplus::sim::{generate, EffectModel, SimConfig};
use nerfplus::{fit, NerfPlusConfig, NerfPlusModel};

fn fixed(a: f64, b: f64, c: f64) -> PenaltyGrid {
    PenaltyGrid::fixed(PenaltySpec::new(a, b, c).unwrap())
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols() + b.ncols(), |i, j| {
        if j < a.ncols() { a[(i, j)] } else { b[(i, j - a.ncols())] }
    })
}

#[test]
fn rnc_configuration_is_cohesion_regression_on_features_and_embedding() {
    let (ds, g) = common::block_dataset(40, 3, 11);
    let (la, lb) = (0.7, 0.3);
    let config = NerfPlusConfig {
        penalty_grid: fixed(la, lb, 1.0),
        ..NerfPlusConfig::rnc(2)
    };
    let model = fit(&ds, &g, &config).unwrap();
    assert!(model.forest.trees[0].splits.is_empty());

    // direct solve of the stacked normal equations by SVD
    let c = ds.clone().center().unwrap();
    let l = build_laplacian(&g, 0.05).unwrap();
    let z = spectral_embedding(&l, 2).unwrap().coordinates;
    let xt = hstack(&c.features, &z);
    let n = 40;
    let w = hstack(&DMatrix::identity(n, n), &xt);
    let mut m = DMatrix::zeros(n + 5, n + 5);
    m.view_mut((0, 0), (n, n)).copy_from(&(&l.matrix * la));
    for j in 0..5 {
        m[(n + j, n + j)] = lb;
    }
    let lhs = w.transpose() * &w + m;
    let nu = lhs.svd(true, true).solve(&(w.transpose() * &c.response), 1e-14).unwrap();

    let t = &model.trees[0];
    assert_eq!(model.linear_features, (0..5).collect::<Vec<_>>());
    assert!((&t.alpha - nu.rows(0, n)).amax() < 1e-8);
    assert!((&t.beta - nu.rows(n, 5)).amax() < 1e-8);
    assert!(t.gamma.is_empty());
}

#[test]
fn rf_plus_configuration_has_no_network_terms() {
    let (ds, g) = common::block_dataset(60, 3, 2);
    let config = NerfPlusConfig {
        penalty_grid: fixed(0.0, 1.0, 1.0),
        embedding_dim: 0,
        n_trees: 5,
        trees_to_tune: 0,
        ..Default::default()
    };
    let model = fit(&ds, &g, &config).unwrap();
    assert!(!model.has_node_effects());
    assert!(model.embedding.is_none());
    let pred = model.predict_training().unwrap();
    assert!(pred.cohesion_part.iter().all(|&v| v == 0.0));
    assert!(pred.embedding_part.iter().all(|&v| v == 0.0));

    let flagged = fit(&ds, &g, &NerfPlusConfig { n_trees: 5, trees_to_tune: 2, ..NerfPlusConfig::rf_plus() }).unwrap();
    assert!(!flagged.has_node_effects());
}

#[test]
fn dominating_penalties_shrink_predictions_to_the_mean() {
    let (ds, g) = common::block_dataset(60, 3, 4);
    let model = fit(&ds, &g, &common::fixed_config(5, 1e12, 1e12, 1e12)).unwrap();
    let pred = model.predict_training().unwrap();
    let sd = ds.response.variance().sqrt();
    let mean = ds.response.mean();
    assert!(pred.predictions.iter().all(|&v| (v - mean).abs() <= 1e-6 * sd));
}

#[test]
fn isolated_test_node_gets_zero_network_terms() {
    let (ds, g) = common::block_dataset(40, 3, 5);
    let model = fit(&ds, &g, &common::fixed_config(4, 1.0, 1.0, 1.0)).unwrap();
    // node 40 is new and has no edges
    let combined = Network::new(41, g.edges().iter().copied()).unwrap();
    let train: Vec<usize> = (0..40).collect();
    let x_new = DMatrix::from_row_slice(1, 3, &[0.3, -1.0, 2.0]);
    let blocks = model.transform_nodes(&x_new, &combined, &train).unwrap();
    assert_eq!(blocks.node_indices, vec![40]);
    assert!(blocks.alpha.iter().all(|a| a[0] == 0.0));
    assert_eq!(blocks.extended[(0, 3)], 0.0);
    assert_eq!(blocks.extended[(0, 4)], 0.0);
    let pred = model.predict_blocks(&blocks).unwrap();
    assert_eq!(pred.cohesion_part[0], 0.0);
}

#[test]
fn duplicate_of_a_training_node_inherits_its_effects() {
    let (ds, g) = common::block_dataset(40, 3, 6);
    let config = NerfPlusConfig {
        lambda_l: 0.0,
        ..common::fixed_config(4, 1.0, 1.0, 1.0)
    };
    let model = fit(&ds, &g, &config).unwrap();
    let k = 17;
    let combined = Network::new(41, g.edges().iter().copied().chain([(k, 40, 1.0)])).unwrap();
    let x_new = ds.features.rows(k, 1).into_owned();
    let train: Vec<usize> = (0..40).collect();
    let blocks = model.transform_nodes(&x_new, &combined, &train).unwrap();
    for (t, fit) in model.trees.iter().enumerate() {
        assert!((blocks.alpha[t][0] - fit.alpha[k]).abs() < 1e-10);
    }
    let train_blocks = model.training_blocks().unwrap();
    assert!((blocks.extended.row(0) - train_blocks.extended.row(k)).amax() < 1e-10);
    let (a, b) = (model.predict_blocks(&blocks).unwrap(), model.predict_training().unwrap());
    assert!((a.predictions[0] - b.predictions[k]).abs() < 1e-9);
}

#[test]
fn decomposition_partitions_predictions() {
    let (mut ds, g) = common::block_dataset(60, 4, 7);
    // a constant column can never be split on and is not in the linear block
    ds.features.column_mut(2).fill(3.0);
    let model = fit(&ds, &g, &common::fast_config(6)).unwrap();
    assert!(!model.linear_features.contains(&2));
    let combined = g.clone();
    let pred = model.predict(&ds.features, &combined, &(0..60).collect::<Vec<_>>()).unwrap();
    let blocks = model.training_blocks().unwrap();
    let d = model.decompose(&blocks).unwrap();
    let agg = d.aggregate();
    for i in 0..60 {
        let total = agg.row(i).sum() + model.response_mean;
        assert!((total - pred.predictions[i]).abs() <= 1e-10);
        assert!(
            (pred.feature_part[i] + pred.cohesion_part[i] + pred.embedding_part[i] + model.response_mean
                - pred.predictions[i])
                .abs()
                <= 1e-10
        );
    }
    let col = d.column(Group::Feature(2));
    assert!(d.per_tree.iter().all(|c| c.column(col).iter().all(|&v| v == 0.0)));
    // in-sample prediction through the combined-network path equals the fit
    let fitted = model.predict_training().unwrap();
    assert!((fitted.predictions - pred.predictions).amax() <= 1e-10);
}

#[test]
fn stump_free_embedding_part_is_z_times_beta() {
    let (ds, g) = common::block_dataset(40, 3, 8);
    let config = NerfPlusConfig {
        penalty_grid: fixed(1.0, 0.5, 1.0),
        ..NerfPlusConfig::rnc(2)
    };
    let model = fit(&ds, &g, &config).unwrap();
    let z = &model.embedding.as_ref().unwrap().coordinates;
    let beta_z = model.trees[0].beta.rows(3, 2).into_owned();
    let expected = z * beta_z;
    let pred = model.predict_training().unwrap();
    assert!((pred.embedding_part - expected).amax() <= 1e-12);
}

#[test]
fn fits_are_deterministic() {
    let (ds, g) = common::block_dataset(50, 3, 9);
    let config = common::fast_config(8);
    let a = fit(&ds, &g, &config).unwrap().to_json().unwrap();
    let b = fit(&ds, &g, &config).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let other = fit(&ds, &g, &NerfPlusConfig { seed: 1, ..config }).unwrap().to_json().unwrap();
    assert_ne!(a, other);
}

#[test]
fn nerf_plus_approaches_rf_plus_as_cohesion_penalty_grows() {
    let sim = SimConfig {
        effect_model: EffectModel::Autocorrelation { omega: 0.5 },
        ..Default::default()
    };
    let data = generate(&sim, 0, None).unwrap();
    let ds = Dataset::new(data.features.clone(), data.response.clone()).unwrap();
    let base = NerfPlusConfig {
        n_trees: 20,
        embedding_dim: 0,
        trees_to_tune: 0,
        ..Default::default()
    };
    let rf_plus = NerfPlusConfig {
        node_effects: false,
        penalty_grid: fixed(0.0, 1.0, 1.0),
        ..base.clone()
    };
    let heavy = NerfPlusConfig {
        penalty_grid: fixed(1e3, 1.0, 1.0),
        ..base
    };
    let a = fit(&ds, &data.network, &rf_plus).unwrap().predict_training().unwrap();
    let b = fit(&ds, &data.network, &heavy).unwrap().predict_training().unwrap();
    let sd = data.response.variance().sqrt();
    let diff = (a.predictions - b.predictions).amax();
    assert!(diff <= 0.01 * sd, "max diff {diff} vs sd {sd}");
}

#[test]
fn out_of_bag_fits_cover_every_node() {
    let (ds, g) = common::block_dataset(60, 3, 10);
    let config = NerfPlusConfig {
        fit_on_oob: true,
        ..common::fast_config(4)
    };
    let model = fit(&ds, &g, &config).unwrap();
    assert!(model.trees.iter().all(|t| t.alpha.len() == 60));
    let pred = model.predict_training().unwrap();
    assert!(pred.predictions.iter().all(|v| v.is_finite()));
}

#[test]
fn model_file_round_trips_and_has_the_documented_fields() {
    let (ds, g) = common::block_dataset(40, 3, 12);
    let model = fit(&ds, &g, &common::fast_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = NerfPlusModel::load(&path).unwrap();
    assert_eq!(back, model);

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["version", "config", "centering", "embedding", "trees"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["embedding"]["eigenvalues"].is_array());
    assert!(v["embedding"]["coordinates"].is_array());
    let tree = &v["trees"][0];
    for key in ["splits", "leaf_means", "alpha", "beta", "gamma", "penalty"] {
        assert!(tree.get(key).is_some(), "missing trees[].{key}");
    }
    if let Some(split) = tree["splits"].get(0) {
        for key in ["feature", "threshold", "n_left", "n_right"] {
            assert!(split.get(key).is_some(), "missing split {key}");
        }
    }
}
