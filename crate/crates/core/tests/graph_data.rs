mod common;

use std::fs;

use nalgebra::{DMatrix, DVector};
use nerfplus::data::{
    build_laplacian, load_dataset, load_network, load_response, write_features, write_network, write_response,
    Dataset, Network,
};
use nerfplus::NerfError;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_quadratic_form_matches_edge_sum(seed in 0u64..100_000, n in 2usize..40) {
        let mut r = common::rng(seed);
        let g = common::random_network(n, 0.2, &mut r);
        let l = build_laplacian(&g, 0.0).unwrap();
        for _ in 0..100 {
            let a = common::gaussian_vec(n, &mut r);
            let quad = a.dot(&(&l.matrix * &a));
            let edges = g.quadratic_form(a.as_slice());
            prop_assert!((quad - edges).abs() <= 1e-10 * edges.abs().max(1.0));
        }
    }

    #[test]
    fn centering_round_trip(seed in 0u64..100_000) {
        let mut r = common::rng(seed);
        let x = common::gaussian(12, 3, &mut r);
        let y = common::gaussian_vec(12, &mut r).add_scalar(5.0);
        let ds = Dataset::new(x, y.clone()).unwrap().center().unwrap();
        let back = ds.uncenter_predictions(&ds.response);
        prop_assert!((back - y).amax() <= 1e-12);
    }
}

#[test]
fn regularization_adds_to_the_diagonal() {
    let g = Network::new(3, [(0, 1, 2.0), (1, 2, 1.0)]).unwrap();
    let l0 = build_laplacian(&g, 0.0).unwrap();
    let l1 = build_laplacian(&g, 0.05).unwrap();
    assert!((l1.matrix - l0.matrix - DMatrix::identity(3, 3) * 0.05).amax() < 1e-15);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.5]);
    let y = DVector::from_vec(vec![0.5, 1.5, -2.0, 3.25]);
    let g = Network::new(4, [(0, 1, 1.0), (2, 3, 0.5), (1, 2, 1.0)]).unwrap();
    let (xp, yp, ep) = (dir.path().join("x.csv"), dir.path().join("y.csv"), dir.path().join("e.tsv"));
    write_features(&x, &xp).unwrap();
    write_response(&y, &yp).unwrap();
    write_network(&g, &ep).unwrap();
    let ds = load_dataset(&xp, &yp).unwrap();
    assert_eq!((ds.n_samples(), ds.n_features()), (4, 2));
    assert_eq!(ds.features, x);
    assert_eq!(ds.response, y);
    assert_eq!(load_network(&ep, 4).unwrap(), g);
}

#[test]
fn loader_contract_errors() {
    let dir = tempfile::tempdir().unwrap();
    let xp = dir.path().join("x.csv");
    fs::write(&xp, "a,b\n1,2\n3,4\n5,6\n7,8\n").unwrap();
    let yp = dir.path().join("y.csv");
    fs::write(&yp, "1\n2\n3\n").unwrap();
    assert!(matches!(load_dataset(&xp, &yp), Err(NerfError::DimensionMismatch(_))));

    fs::write(&xp, "a,b\n1,NaN\n3,4\n").unwrap();
    fs::write(&yp, "1\n2\n").unwrap();
    assert!(matches!(load_dataset(&xp, &yp), Err(NerfError::Parse { .. })));

    let missing = dir.path().join("nope.tsv");
    match load_network(&missing, 3) {
        Err(NerfError::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("unexpected {other:?}"),
    }

    let ep = dir.path().join("e.tsv");
    fs::write(&ep, "0\t1\n1\t5\n").unwrap();
    assert!(load_network(&ep, 3).is_err());

    fs::write(&yp, "y\n1.5\n-2\n").unwrap();
    assert_eq!(load_response(&yp).unwrap().as_slice(), &[1.5, -2.0]);
}
