//! Synthetic network regression experiments.
//!
//! Each replicate draws a stochastic block model network, Gaussian
//! covariates and a response with a network effect, splits the nodes 80/20,
//! fits the requested methods on the training nodes and scores them on the
//! held-out nodes. Replicate `r` draws from substreams keyed by
//! `(seed, r)`, so scenarios that share a seed share their networks,
//! covariates and noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_features, Dataset, Network};
use crate::error::{NerfError, Result};
use crate::forest::fit_forest;
use crate::influence::{sample_influence, InfluenceOptions};
use crate::interpret::{mdi_plus, permutation_importance, r_squared, Metric, Target, TargetScore};
use crate::linalg::{entries_of, mean, rows_of, sample_sd, sample_variance};
use crate::model::{fit_named, NerfPlusConfig};
use crate::ridge::{PenaltyGrid, PenaltySpec};
use crate::rng::{substream, Domain};

const SBM_RETRIES: usize = 100;

/// Stochastic block model with equal blocks (the remainder joins the last
/// block). Draws with an isolated node are rejected and redrawn.
pub fn gen_sbm<R: Rng>(n: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut R) -> Result<Network> {
    if blocks == 0 || blocks > n {
        return Err(NerfError::InvalidInput(format!("cannot split {n} nodes into {blocks} blocks")));
    }
    for (name, v) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(NerfError::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let labels = block_labels(n, blocks);
    for _ in 0..SBM_RETRIES {
        let mut edges = Vec::new();
        let mut degree = vec![0usize; n];
        for i in 0..n {
            for j in i + 1..n {
                let prob = if labels[i] == labels[j] { p_in } else { p_out };
                if rng.random::<f64>() < prob {
                    edges.push((i, j, 1.0));
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        if degree.iter().all(|&d| d > 0) {
            return Network::new(n, edges);
        }
    }
    Err(NerfError::RetriesExhausted(SBM_RETRIES))
}

pub fn block_labels(n: usize, blocks: usize) -> Vec<usize> {
    let size = (n / blocks).max(1);
    (0..n).map(|i| (i / size).min(blocks - 1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalForm {
    Linear,
    Polynomial,
    Lss,
}

/// Mean function of the covariates.
pub fn eval_f(form: FunctionalForm, features: &DMatrix<f64>) -> Result<DVector<f64>> {
    let need = match form {
        FunctionalForm::Linear => 2,
        _ => 6,
    };
    if features.ncols() < need {
        return Err(NerfError::InvalidInput(format!(
            "{form:?} needs at least {need} covariates, got {}",
            features.ncols()
        )));
    }
    let ind = |v: f64| (v > 0.0) as u8 as f64;
    Ok(DVector::from_fn(features.nrows(), |i, _| {
        let x = |k: usize| features[(i, k)];
        match form {
            FunctionalForm::Linear => x(0) + x(1),
            FunctionalForm::Polynomial => x(0) + x(0) * x(1) + x(2) + x(2) * x(3) + x(4) + x(4) * x(5),
            FunctionalForm::Lss => {
                ind(x(0)) * ind(x(1)) + ind(x(2)) * ind(x(3)) + ind(x(4)) * ind(x(5))
            }
        }
    }))
}

/// Noise level giving the requested proportion of variance explained by `f`.
pub fn calibrate_noise(f_values: &DVector<f64>, pve: f64) -> Result<f64> {
    if !(pve > 0.0 && pve < 1.0) {
        return Err(NerfError::InvalidInput(format!("pve must lie in (0, 1), got {pve}")));
    }
    let var = sample_variance(f_values.as_slice());
    if var <= 0.0 {
        return Err(NerfError::InvalidInput("signal is constant; cannot calibrate noise".into()));
    }
    Ok((var * (1.0 - pve) / pve).sqrt())
}

/// `y = α + f + ε` with `α = −η, 0, η` on blocks 0, 1, 2.
pub fn gen_response_blockwise(
    f_values: &DVector<f64>,
    labels: &[usize],
    eta: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    if labels.iter().any(|&b| b > 2) || labels.len() != f_values.len() || noise.len() != f_values.len() {
        return Err(NerfError::InvalidInput(
            "blockwise effects need three blocks and matching lengths".into(),
        ));
    }
    Ok(DVector::from_fn(f_values.len(), |i, _| {
        (labels[i] as f64 - 1.0) * eta + f_values[i] + noise[i]
    }))
}

/// Solves `(I − ωD⁻¹A) y = f + ε`.
pub fn gen_response_autocorr(
    f_values: &DVector<f64>,
    network: &Network,
    omega: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&omega) {
        return Err(NerfError::InvalidInput(format!("omega must lie in [0, 1), got {omega}")));
    }
    let n = network.n_nodes();
    let deg = network.degrees();
    if deg.iter().any(|&d| d <= 0.0) {
        return Err(NerfError::InvalidNetwork("autocorrelation needs every node to have an edge".into()));
    }
    let a = network.adjacency();
    let m = DMatrix::from_fn(n, n, |i, j| (i == j) as u8 as f64 - omega * a[(i, j)] / deg[i]);
    m.lu()
        .solve(&(f_values + noise))
        .ok_or_else(|| NerfError::Singular("autocorrelation system".into()))
}

/// Moves `y[i_star]` away from zero by `kappa` standard deviations of `y`.
pub fn inject_outlier(y: &DVector<f64>, i_star: usize, kappa: f64) -> DVector<f64> {
    let shift = kappa * sample_sd(y.as_slice());
    let mut out = y.clone();
    out[i_star] += if y[i_star] > 0.0 { shift } else { -shift };
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EffectModel {
    Blockwise { eta: f64 },
    Autocorrelation { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    NerfPlus,
    RfPlus,
    Rnc,
    Linear,
    Rf,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::NerfPlus => "nerf_plus",
            MethodKind::RfPlus => "rf_plus",
            MethodKind::Rnc => "rnc",
            MethodKind::Linear => "linear",
            MethodKind::Rf => "rf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    pub kappas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub effect_model: EffectModel,
    pub functional_form: FunctionalForm,
    pub pve: f64,
    pub train_fraction: f64,
    pub n_replicates: usize,
    pub methods: Vec<MethodKind>,
    /// Settings for NeRF+; the other methods derive theirs from it.
    pub model: NerfPlusConfig,
    /// Permutation importance of every target for NeRF+ on the test nodes.
    pub importance: bool,
    pub mdi_plus: bool,
    pub n_permutations: usize,
    /// Influence rank of an injected training outlier, one NeRF+ fit per κ.
    pub outlier: Option<OutlierSpec>,
    pub influence_max_trees: Option<usize>,
    /// Read covariates from this CSV instead of drawing them.
    pub features_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            name: "scenario".into(),
            n: 300,
            p: 20,
            blocks: 3,
            p_in: 0.2,
            p_out: 0.02,
            effect_model: EffectModel::Autocorrelation { omega: 0.5 },
            functional_form: FunctionalForm::Lss,
            pve: 0.4,
            train_fraction: 0.8,
            n_replicates: 20,
            methods: vec![
                MethodKind::NerfPlus,
                MethodKind::RfPlus,
                MethodKind::Rnc,
                MethodKind::Linear,
                MethodKind::Rf,
            ],
            model: NerfPlusConfig {
                n_trees: 100,
                ..Default::default()
            },
            importance: false,
            mdi_plus: false,
            n_permutations: 50,
            outlier: None,
            influence_max_trees: None,
            features_path: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NerfError::InvalidInput(m));
        if !(self.pve > 0.0 && self.pve < 1.0) {
            return bad(format!("pve must lie in (0, 1), got {}", self.pve));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.n_replicates == 0 {
            return bad("n_replicates must be at least 1".into());
        }
        match self.effect_model {
            EffectModel::Autocorrelation { omega } if !(0.0..1.0).contains(&omega) => {
                return bad(format!("omega must lie in [0, 1), got {omega}"))
            }
            EffectModel::Blockwise { .. } if self.blocks != 3 => {
                return bad("blockwise effects need exactly 3 blocks".into())
            }
            _ => {}
        }
        if (self.importance || self.mdi_plus || self.outlier.is_some())
            && !self.methods.contains(&MethodKind::NerfPlus)
        {
            return bad("importance and outlier analyses need the nerf_plus method".into());
        }
        if self.importance && self.n_permutations == 0 {
            return bad("n_permutations must be at least 1".into());
        }
        self.model.validate()
    }
}

/// A simulation file holds one scenario or `{"scenarios": [...]}`.
pub fn load_sim_configs(path: impl AsRef<Path>) -> Result<Vec<SimConfig>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum File {
        Many { scenarios: Vec<SimConfig> },
        One(SimConfig),
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NerfError::io(path, e))?;
    Ok(match serde_json::from_str(&text)? {
        File::Many { scenarios } => scenarios,
        File::One(c) => vec![c],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierResult {
    /// Training-set position of the perturbed sample.
    pub index: usize,
    pub kappas: Vec<f64>,
    pub ranks: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub test_r2: BTreeMap<String, f64>,
    pub importance: Option<Vec<TargetScore>>,
    pub mdi_plus: Option<Vec<TargetScore>>,
    pub outlier: Option<OutlierResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: SimConfig,
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<SummaryRow>,
}

impl ScenarioReport {
    /// `(method, metric, value)` for every replicate.
    fn tidy(&self) -> Vec<(usize, String, String, f64)> {
        let mut rows = Vec::new();
        for r in &self.replicates {
            for (m, v) in &r.test_r2 {
                rows.push((r.replicate, m.clone(), "test_r2".into(), *v));
            }
            for (label, scores) in [("permutation", &r.importance), ("mdi_plus", &r.mdi_plus)] {
                for s in scores.iter().flatten() {
                    rows.push((r.replicate, "nerf_plus".into(), format!("{label}:{}", s.name), s.score));
                }
            }
            if let Some(o) = &r.outlier {
                for (k, rank) in o.kappas.iter().zip(&o.ranks) {
                    rows.push((r.replicate, "nerf_plus".into(), format!("outlier_rank:kappa={k}"), *rank as f64));
                }
            }
        }
        rows
    }

    pub fn values(&self, method: &str, metric: &str) -> Vec<f64> {
        self.tidy()
            .into_iter()
            .filter(|(_, m, k, _)| m == method && k == metric)
            .map(|(_, _, _, v)| v)
            .collect()
    }

    fn summarize(&mut self) {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for (_, m, k, v) in self.tidy() {
            groups.entry((m, k)).or_default().push(v);
        }
        self.summary = groups
            .into_iter()
            .map(|((method, metric), v)| SummaryRow {
                method,
                metric,
                mean: mean(&v),
                stderr: sample_sd(&v) / (v.len() as f64).sqrt(),
            })
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenarios: Vec<ScenarioReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,replicate,method,metric,value\n");
        for s in &self.scenarios {
            for (r, m, k, v) in s.tidy() {
                out.push_str(&format!("{},{r},{m},{k},{v}\n", s.config.name));
            }
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| NerfError::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()?).map_err(|e| NerfError::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| NerfError::io(&csv, e))
    }
}

/// One replicate's generated data.
#[derive(Debug, Clone)]
pub struct SimData {
    pub network: Network,
    pub labels: Vec<usize>,
    pub features: DMatrix<f64>,
    pub signal: DVector<f64>,
    pub noise: DVector<f64>,
    pub response: DVector<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn generate(config: &SimConfig, replicate: usize, fixed_features: Option<&DMatrix<f64>>) -> Result<SimData> {
    let r = replicate as u64;
    let network = gen_sbm(config.n, config.blocks, config.p_in, config.p_out, &mut substream(config.seed, Domain::Network, r))?;
    let labels = block_labels(config.n, config.blocks);
    let mut rng = substream(config.seed, Domain::Replicate, r);
    let features = match fixed_features {
        Some(x) => {
            if x.nrows() < config.n {
                return Err(NerfError::DimensionMismatch(format!(
                    "feature file has {} rows, need {}",
                    x.nrows(),
                    config.n
                )));
            }
            x.rows(0, config.n).into_owned()
        }
        None => DMatrix::from_fn(config.n, config.p, |_, _| rng.sample(StandardNormal)),
    };
    let z = DVector::from_fn(config.n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let signal = eval_f(config.functional_form, &features)?;
    let noise = z * calibrate_noise(&signal, config.pve)?;
    let response = match config.effect_model {
        EffectModel::Blockwise { eta } => gen_response_blockwise(&signal, &labels, eta, &noise)?,
        EffectModel::Autocorrelation { omega } => gen_response_autocorr(&signal, &network, omega, &noise)?,
    };
    let mut order: Vec<usize> = (0..config.n).collect();
    order.shuffle(&mut substream(config.seed, Domain::Split, r));
    let n_train = ((config.n as f64) * config.train_fraction).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SimData {
        network,
        labels,
        features,
        signal,
        noise,
        response,
        train,
        test,
    })
}

/// Method settings derived from the NeRF+ configuration.
pub fn method_config(kind: MethodKind, base: &NerfPlusConfig) -> NerfPlusConfig {
    match kind {
        MethodKind::NerfPlus | MethodKind::Rf => base.clone(),
        MethodKind::RfPlus => NerfPlusConfig {
            node_effects: false,
            embedding_dim: 0,
            ..base.clone()
        },
        MethodKind::Rnc => NerfPlusConfig {
            penalty_grid: base.penalty_grid.clone(),
            lambda_l: base.lambda_l,
            cv_folds: base.cv_folds,
            seed: base.seed,
            ..NerfPlusConfig::rnc(base.embedding_dim)
        },
        MethodKind::Linear => NerfPlusConfig {
            n_trees: 1,
            max_depth: Some(0),
            bootstrap: false,
            node_effects: false,
            embedding_dim: 0,
            trees_to_tune: 1,
            restrict_linear_to_split_features: false,
            penalty_grid: PenaltyGrid::fixed(PenaltySpec {
                lambda_alpha: 0.0,
                lambda_beta: 0.0,
                lambda_gamma: 0.0,
            }),
            seed: base.seed,
            ..Default::default()
        },
    }
}

pub fn run_replicate(config: &SimConfig, replicate: usize, fixed_features: Option<&DMatrix<f64>>) -> Result<ReplicateResult> {
    let data = generate(config, replicate, fixed_features)?;
    let train_net = data.network.induced(&data.train)?;
    let x_train = rows_of(&data.features, &data.train);
    let x_test = rows_of(&data.features, &data.test);
    let y_train = entries_of(&data.response, &data.train);
    let y_test = entries_of(&data.response, &data.test);
    let center = y_train.mean();
    let names: Vec<String> = (0..data.features.ncols()).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(x_train.clone(), y_train.clone())?;

    let mut test_r2 = BTreeMap::new();
    let mut nerf = None;
    for &kind in &config.methods {
        let pred = if kind == MethodKind::Rf {
            let ds = dataset.clone().center()?;
            let forest = fit_forest(&ds.features, &ds.response, &config.model.forest_params(), config.model.seed)?;
            forest.predict(&ds.center_features(&x_test)?)?.add_scalar(ds.response_mean)
        } else {
            let model = fit_named(&dataset, &train_net, &method_config(kind, &config.model), Some(names.clone()))?;
            let pred = model.predict(&x_test, &data.network, &data.train)?.predictions;
            if kind == MethodKind::NerfPlus {
                nerf = Some(model);
            }
            pred
        };
        test_r2.insert(kind.name().to_string(), r_squared(&y_test, &pred, center));
    }

    let (mut importance, mut mdi) = (None, None);
    if let Some(model) = &nerf {
        if config.importance || config.mdi_plus {
            let blocks = model.transform_nodes(&x_test, &data.network, &data.train)?;
            let targets = Target::all(model.n_features());
            if config.importance {
                let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(replicate as u64);
                let rep = permutation_importance(model, &blocks, &y_test, &targets, config.n_permutations, Metric::Rmse, seed)?;
                importance = Some(rep.targets);
            }
            if config.mdi_plus {
                mdi = Some(mdi_plus(model, &blocks, &y_test, &targets)?.targets);
            }
        }
    }

    let outlier = match &config.outlier {
        None => None,
        Some(spec) => {
            let index = substream(config.seed, Domain::Replicate, replicate as u64 + (1 << 40)).random_range(0..data.train.len());
            let nerf_config = method_config(MethodKind::NerfPlus, &config.model);
            let options = InfluenceOptions {
                max_trees: config.influence_max_trees,
            };
            let mut ranks = Vec::new();
            let mut scores = Vec::new();
            for &kappa in &spec.kappas {
                let y = inject_outlier(&y_train, index, kappa);
                let model = fit_named(&Dataset::new(x_train.clone(), y)?, &train_net, &nerf_config, Some(names.clone()))?;
                let report = sample_influence(&model, &x_test, &data.network, &data.train, options)?;
                ranks.push(report.ranks[index]);
                scores.push(report.scores[index]);
            }
            Some(OutlierResult {
                index,
                kappas: spec.kappas.clone(),
                ranks,
                scores,
            })
        }
    };

    Ok(ReplicateResult {
        replicate,
        test_r2,
        importance,
        mdi_plus: mdi,
        outlier,
    })
}

pub fn run_experiment(config: &SimConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let fixed = match &config.features_path {
        Some(path) => Some(load_features(path)?.1),
        None => None,
    };
    let replicates = (0..config.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r, fixed.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut report = ScenarioReport {
        config: config.clone(),
        replicates,
        summary: Vec::new(),
    };
    report.summarize();
    Ok(report)
}

pub fn run_scenarios(configs: &[SimConfig]) -> Result<ExperimentReport> {
    Ok(ExperimentReport {
        scenarios: configs.iter().map(run_experiment).collect::<Result<_>>()?,
    })
}
