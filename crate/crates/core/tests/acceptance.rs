//! Acceptance criteria 1–8. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.
//!
//! ```text
//! cargo test --release --test acceptance -- --nocapture
//! ```

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use nerfplus::data::{build_laplacian, Dataset};
use nerfplus::embedding::spectral_embedding;
use nerfplus::forest::{fit_tree, TreeParams};
use nerfplus::influence::{loo_coefficients, sample_influence, InfluenceOptions, LooWorkspace};
use nerfplus::interpret::{local_importance, permutation_importance, Metric, Target};
use nerfplus::ridge::{build_design, build_penalty, solve, PenaltySpec};
use nerfplus::sim::{run_experiment, EffectModel, FunctionalForm, MethodKind, OutlierSpec, ScenarioReport, SimConfig};
use nerfplus::{fit, NerfPlusConfig};
use rand::Rng;

fn report(n: u8, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn svd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.svd(true, true).solve(b, 1e-14).unwrap()
}

#[test]
fn criterion_1_tree_linearization() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(1000 + seed);
        let n = r.random_range(8..=64);
        let p = r.random_range(1..=5);
        let x = common::gaussian(n, p, &mut r);
        let y = DVector::from_fn(n, |i, _| (x[(i, 0)] > 0.0) as u8 as f64 + x[(i, p - 1)] * 0.5 + r.random::<f64>());
        let params = TreeParams {
            max_depth: Some(r.random_range(1..=4)),
            min_leaf: 1,
            mtry_fraction: 1.0,
        };
        let all: Vec<usize> = (0..n).collect();
        let tree = fit_tree(&x, &y, &all, &params, &mut r).unwrap();
        let psi = tree.stump_features(&x).unwrap();
        let ybar = y.mean();
        let fitted = if psi.ncols() == 0 {
            DVector::from_element(n, ybar)
        } else {
            (&psi * svd_solve(psi.clone(), &y.add_scalar(-ybar))).add_scalar(ybar)
        };
        worst = worst.max((fitted - tree.predict(&x).unwrap()).amax());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && within(elapsed, 5);
    report(1, pass, format!("max abs diff {worst:.2e}, {elapsed:.2?}"));
    assert!(pass);
}

/// Conjugate gradient on the gradient of `‖y − Wν‖² + ν′Mν`.
fn conjugate_gradient(w: &DMatrix<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let apply = |v: &DVector<f64>| w.tr_mul(&(w * v)) + m * v;
    let b = w.tr_mul(y);
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..10 * b.len() {
        if rr.sqrt() <= 1e-15 * b.norm() {
            break;
        }
        let ad = apply(&d);
        let step = rr / d.dot(&ad);
        x += &d * step;
        r -= &ad * step;
        let next = r.dot(&r);
        d = &r + &d * (next / rr);
        rr = next;
    }
    x
}

#[test]
fn criterion_2_solver_matches_iterative_minimizer() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(2000 + seed);
        let n = r.random_range(5..=40);
        let q = r.random_range(1..=5);
        let m_t = r.random_range(0..=10);
        let g = common::random_network(n, 0.2, &mut r);
        let lap = build_laplacian(&g, 0.05).unwrap().matrix;
        let linear = common::gaussian(n, q, &mut r);
        let stump = common::gaussian(n, m_t, &mut r);
        let y = common::gaussian_vec(n, &mut r);
        let spec = PenaltySpec::new(r.random_range(0.01..10.0), r.random_range(0.01..10.0), r.random_range(0.01..10.0)).unwrap();
        let (w, _) = build_design(n, &linear, &stump).unwrap();
        let pen = build_penalty(Some(&lap), &spec, q, m_t).unwrap();
        let closed = solve(&w, &y, &pen, false).unwrap().nu;

        // the penalty matrix rebuilt by hand for the oracle
        let d = n + q + m_t;
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (n, n)).copy_from(&(&lap * spec.lambda_alpha));
        for j in 0..q {
            m[(n + j, n + j)] = spec.lambda_beta;
        }
        for j in 0..m_t {
            m[(n + q + j, n + q + j)] = spec.lambda_gamma;
        }
        let objective = |v: &DVector<f64>| (&y - &w * v).norm_squared() + v.dot(&(&m * v));
        let iterative = conjugate_gradient(&w, &m, &y);
        let gap = (objective(&closed) - objective(&iterative)).abs() / objective(&iterative).abs();
        worst = worst.max(gap);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && within(elapsed, 10);
    report(2, pass, format!("max relative objective gap {worst:.2e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_3_loo_identity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(3000 + seed);
        let n = r.random_range(5..=50);
        let q = r.random_range(0..=4);
        let m_t = r.random_range(0..=20.min(n));
        let g = common::random_network(n, 0.1, &mut r);
        let lap = build_laplacian(&g, 0.05).unwrap().matrix;
        let linear = common::gaussian(n, q, &mut r);
        let stump = common::gaussian(n, m_t, &mut r);
        let y = common::gaussian_vec(n, &mut r);
        let spec = PenaltySpec::new(r.random_range(0.1..5.0), r.random_range(0.1..5.0), r.random_range(0.1..5.0)).unwrap();
        let (w, _) = build_design(n, &linear, &stump).unwrap();
        let pen = build_penalty(Some(&lap), &spec, q, m_t).unwrap();
        let ws = LooWorkspace::new(w.clone(), y.clone(), &pen).unwrap();
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            // drop row i of W, column α_i, and row/column i of L
            let cols: Vec<usize> = (0..n + q + m_t).filter(|&c| c != i).collect();
            let wi = DMatrix::from_fn(n - 1, cols.len(), |a, b| w[(keep[a], cols[b])]);
            let yi = DVector::from_fn(n - 1, |a, _| y[keep[a]]);
            let mi = DMatrix::from_fn(cols.len(), cols.len(), |a, b| pen.matrix[(cols[a], cols[b])]);
            let refit = svd_solve(wi.tr_mul(&wi) + mi, &wi.tr_mul(&yi));
            worst = worst.max((loo_coefficients(&ws, i).unwrap() - refit).amax());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8 && within(elapsed, 30);
    report(3, pass, format!("max abs coefficient diff {worst:.2e}, {elapsed:.2?}"));
    assert!(pass);
}

fn autocorrelation(omega: f64) -> &'static ScenarioReport {
    static HIGH: OnceLock<ScenarioReport> = OnceLock::new();
    static LOW: OnceLock<ScenarioReport> = OnceLock::new();
    let cell = if omega > 0.5 { &HIGH } else { &LOW };
    cell.get_or_init(|| {
        run_experiment(&SimConfig {
            name: format!("autocorrelation omega={omega}"),
            effect_model: EffectModel::Autocorrelation { omega },
            methods: vec![MethodKind::NerfPlus, MethodKind::RfPlus],
            importance: omega > 0.5,
            ..Default::default()
        })
        .unwrap()
    })
}

fn blockwise(eta: f64) -> &'static ScenarioReport {
    static STRONG: OnceLock<ScenarioReport> = OnceLock::new();
    static NONE: OnceLock<ScenarioReport> = OnceLock::new();
    let cell = if eta > 0.0 { &STRONG } else { &NONE };
    cell.get_or_init(|| {
        run_experiment(&SimConfig {
            name: format!("blockwise eta={eta}"),
            effect_model: EffectModel::Blockwise { eta },
            functional_form: FunctionalForm::Linear,
            methods: vec![MethodKind::NerfPlus],
            importance: true,
            ..Default::default()
        })
        .unwrap()
    })
}

fn permutation_scores(report: &ScenarioReport, target: &str) -> Vec<f64> {
    report.values("nerf_plus", &format!("permutation:{target}"))
}

#[test]
fn criterion_4_network_assisted_accuracy() {
    let start = Instant::now();
    let high = autocorrelation(0.9);
    let low = autocorrelation(0.1);
    let gain_high = mean(&high.values("nerf_plus", "test_r2")) - mean(&high.values("rf_plus", "test_r2"));
    let gap_low = mean(&low.values("nerf_plus", "test_r2")) - mean(&low.values("rf_plus", "test_r2"));
    let elapsed = start.elapsed();
    let pass = gain_high >= 0.05 && gap_low.abs() <= 0.05 && within(elapsed, 30 * 60);
    report(
        4,
        pass,
        format!("omega=0.9 gain {gain_high:.3}, omega=0.1 gap {gap_low:.3}, {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_signal_features_and_network_importance() {
    let start = Instant::now();
    let strong = blockwise(1.5);
    let none = blockwise(0.0);
    let p = strong.config.p;
    let signal = [0, 1];
    let reps = strong.replicates.len();
    let mut separated = 0;
    for r in &strong.replicates {
        let scores = r.importance.as_ref().unwrap();
        let score = |k: usize| scores.iter().find(|s| s.name == format!("x{k}")).unwrap().score;
        let min_signal = signal.iter().map(|&k| score(k)).fold(f64::INFINITY, f64::min);
        let max_noise = (0..p).filter(|k| !signal.contains(k)).map(score).fold(f64::NEG_INFINITY, f64::max);
        if min_signal > max_noise {
            separated += 1;
        }
    }
    let (a, b) = (permutation_scores(strong, "network"), permutation_scores(none, "network"));
    let network_up = a.iter().zip(&b).filter(|(x, y)| x > y).count();
    let elapsed = start.elapsed();
    let pass = separated * 10 >= reps * 9 && network_up * 10 >= reps * 9 && within(elapsed, 30 * 60);
    report(
        5,
        pass,
        format!("signal separated in {separated}/{reps}, network eta=1.5 > eta=0 in {network_up}/{reps}, {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_cohesion_versus_embedding() {
    let start = Instant::now();
    let auto = autocorrelation(0.9);
    let block = blockwise(1.5);
    let count = |rep: &ScenarioReport, cohesion_wins: bool| {
        let c = permutation_scores(rep, "cohesion");
        let e = permutation_scores(rep, "embedding");
        c.iter().zip(&e).filter(|(c, e)| (c > e) == cohesion_wins).count()
    };
    let (a, b) = (count(auto, true), count(block, false));
    let reps = auto.replicates.len();
    let elapsed = start.elapsed();
    let pass = a * 10 >= reps * 8 && b * 10 >= reps * 8;
    report(
        6,
        pass,
        format!("autocorrelation cohesion > embedding {a}/{reps}, blockwise embedding > cohesion {b}/{reps}, {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_outlier_influence_rank() {
    let start = Instant::now();
    let rep = run_experiment(&SimConfig {
        name: "outlier".into(),
        methods: vec![MethodKind::NerfPlus],
        outlier: Some(OutlierSpec {
            kappas: vec![1.0, 2.0, 3.0, 4.0],
        }),
        ..Default::default()
    })
    .unwrap();
    let mut top = Vec::new();
    let mut monotone = 0;
    for r in &rep.replicates {
        let o = r.outlier.as_ref().unwrap();
        top.push(o.ranks[3]);
        if o.ranks.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    top.sort_unstable();
    let n = top.len();
    let median = if n % 2 == 1 { top[n / 2] as f64 } else { (top[n / 2 - 1] + top[n / 2]) as f64 / 2.0 };
    let elapsed = start.elapsed();
    let pass = median == 1.0 && monotone * 10 >= n * 9 && within(elapsed, 20 * 60);
    report(
        7,
        pass,
        format!("median rank at kappa=4 {median}, non-increasing in {monotone}/{n}, {elapsed:.1?}"),
    );
    assert!(pass);
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

/// Model, permutation report, local CSV rows and influence CSV for one fit.
fn pipeline_outputs(seed: u64) -> Vec<String> {
    let (ds, g) = common::block_dataset(60, 4, seed);
    let (train, _) = common::split_every(60, 5);
    let sub = g.induced(&train).unwrap();
    let train_ds = Dataset::new(common::rows(&ds.features, &train), common::entries(&ds.response, &train)).unwrap();
    let model = fit(&train_ds, &sub, &common::fast_config(6)).unwrap();
    let blocks = model.transform_nodes(&ds.features, &g, &train).unwrap();
    let perm = permutation_importance(&model, &blocks, &ds.response, &Target::all(4), 10, Metric::Rmse, 5).unwrap();
    let local = local_importance(&model, &blocks).unwrap();
    let x_test = common::rows(&ds.features, &(0..60).filter(|i| i % 5 == 4).collect::<Vec<_>>());
    let infl = sample_influence(&model, &x_test, &g, &train, InfluenceOptions::default()).unwrap();
    vec![
        model.to_json().unwrap(),
        perm.to_json().unwrap(),
        format!("{:?}", local.scores.as_slice()),
        format!("{:?} {:?}", infl.scores, infl.ranks),
    ]
}

#[test]
fn criterion_8_property_suites() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // local-importance additivity
    let (ds, g) = common::block_dataset(60, 3, 81);
    let model = fit(&ds, &g, &common::fast_config(5)).unwrap();
    let blocks = model.training_blocks().unwrap();
    let pred = model.predict_blocks(&blocks).unwrap().predictions;
    let local = local_importance(&model, &blocks).unwrap();
    let centered = pred.add_scalar(-pred.mean());
    let additivity = (0..60)
        .map(|i| ((0..4).map(|c| local.scores[(i, c)]).sum::<f64>() - centered[i]).abs())
        .fold(0.0, f64::max);
    if additivity > 1e-10 {
        failures.push(format!("additivity {additivity:.1e}"));
    }

    // stump-column zero-sum on each tree's bootstrap sample
    let extended = blocks.extended.clone();
    let mut zero_sum = 0.0f64;
    for (tree, sample) in model.forest.trees.iter().zip(&model.forest.in_bag_indices) {
        let psi = tree.stump_features(&extended).unwrap();
        for s in 0..psi.ncols() {
            zero_sum = zero_sum.max(sample.iter().map(|&i| psi[(i, s)]).sum::<f64>().abs());
        }
    }
    if zero_sum > 1e-10 {
        failures.push(format!("stump zero-sum {zero_sum:.1e}"));
    }

    // Laplacian quadratic form and embedding orthonormality
    let mut r = common::rng(82);
    let mut quad = 0.0f64;
    let mut ortho = 0.0f64;
    for _ in 0..20 {
        let net = common::random_network(30, 0.15, &mut r);
        let l = build_laplacian(&net, 0.0).unwrap();
        for _ in 0..100 {
            let a = common::gaussian_vec(30, &mut r);
            let lhs = a.dot(&(&l.matrix * &a));
            let rhs = net.quadratic_form(a.as_slice());
            quad = quad.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
        let z = spectral_embedding(&build_laplacian(&net, 0.05).unwrap(), 3).unwrap().coordinates;
        ortho = ortho.max((z.tr_mul(&z) - DMatrix::identity(3, 3)).amax());
    }
    if quad > 1e-10 {
        failures.push(format!("quadratic form {quad:.1e}"));
    }
    if ortho > 1e-8 {
        failures.push(format!("orthonormality {ortho:.1e}"));
    }

    // determinism and thread-count invariance
    let one = in_pool(1, || pipeline_outputs(83));
    let again = in_pool(1, || pipeline_outputs(83));
    let four = in_pool(4, || pipeline_outputs(83));
    if one != again {
        failures.push("repeat run differs".into());
    }
    if one != four {
        failures.push("1 vs 4 threads differ".into());
    }
    let sim = SimConfig {
        n: 60,
        p: 6,
        n_replicates: 3,
        importance: true,
        n_permutations: 5,
        model: NerfPlusConfig {
            n_trees: 5,
            trees_to_tune: 1,
            penalty_grid: common::fast_config(5).penalty_grid,
            ..Default::default()
        },
        ..Default::default()
    };
    let s1 = in_pool(1, || run_experiment(&sim).unwrap());
    let s4 = in_pool(4, || run_experiment(&sim).unwrap());
    if serde_json::to_string(&s1).unwrap() != serde_json::to_string(&s4).unwrap() {
        failures.push("simulation report differs across thread counts".into());
    }

    let pass = failures.is_empty();
    let detail = if pass { format!("all properties hold, {:.1?}", start.elapsed()) } else { failures.join("; ") };
    report(8, pass, detail);
    assert!(pass);
}
