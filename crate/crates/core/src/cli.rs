//! Command-line interface: `fit`, `predict`, `interpret`, `influence` and
//! `simulate`.
//!
//! Exit codes: 0 on success, 2 for input or contract errors, 3 for numerical
//! failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::data::{load_dataset, load_features, load_network, load_response, Network};
use crate::error::{NerfError, Result};
use crate::influence::{sample_influence, InfluenceOptions};
use crate::interpret::{local_importance, mdi_plus, permutation_importance, r_squared, Metric, Target};
use crate::linalg::{entries_of, rows_of};
use crate::model::{fit_named, NerfPlusConfig, NerfPlusModel};
use crate::sim::{load_sim_configs, run_scenarios};

#[derive(Parser, Debug)]
#[command(name = "nerfplus", version, about = "Network-assisted random forest plus")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Predict for the nodes of a combined network.
    Predict(PredictArgs),
    /// Global or local importance report.
    Interpret(InterpretArgs),
    /// Leave-one-out influence of every training sample.
    Influence(InfluenceArgs),
    /// Run simulation scenarios from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(clap::Args, Debug)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    /// JSON model configuration; command-line values take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set n_trees=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Fix λ_α; 0 drops the node effects (RF+ when combined with
    /// `--embedding-dim 0`).
    #[arg(long)]
    lambda_alpha: Option<f64>,
    #[arg(long)]
    lambda_beta: Option<f64>,
    #[arg(long)]
    lambda_gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Data for nodes of a combined network: row `k` of the features (and
/// response) belongs to node `k`; `train_index` lists the model's training
/// nodes in training order.
#[derive(clap::Args, Debug)]
struct NodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    train_index: PathBuf,
}

#[derive(clap::Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    nodes: NodeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Permutation,
    Mdiplus,
    Local,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Rmse,
    R2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Rows {
    /// Nodes not in the training index.
    Test,
    Train,
    All,
}

#[derive(clap::Args, Debug)]
struct InterpretArgs {
    #[command(flatten)]
    nodes: NodeArgs,
    /// Response for every combined node (required except for local mode).
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "permutation")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "test")]
    rows: Rows,
    #[arg(long, default_value_t = 50)]
    permutations: usize,
    #[arg(long, value_enum, default_value = "rmse")]
    metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report (permutation, mdiplus) or CSV matrix (local).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct InfluenceArgs {
    #[command(flatten)]
    nodes: NodeArgs,
    /// Use only the first k trees.
    #[arg(long)]
    max_trees: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a key in every scenario, e.g. `--set n_replicates=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| NerfError::InvalidInput(format!("thread pool: {e}")))?;
    let quiet = cli.quiet;
    pool.install(|| match cli.command {
        Command::Fit(a) => cmd_fit(a, quiet),
        Command::Predict(a) => cmd_predict(a),
        Command::Interpret(a) => cmd_interpret(a),
        Command::Influence(a) => cmd_influence(a),
        Command::Simulate(a) => cmd_simulate(a, quiet),
    })
}

/// Applies `key=value` overrides (dotted keys reach nested fields; values
/// are parsed as JSON, falling back to a string).
pub fn apply_overrides<C: Serialize + DeserializeOwned>(config: &C, overrides: &[String]) -> Result<C> {
    let mut value = serde_json::to_value(config)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| NerfError::InvalidInput(format!("override `{item}` is not KEY=VALUE")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| NerfError::InvalidInput(format!("unknown configuration key `{key}`")))?;
        }
        *slot = parsed;
    }
    serde_json::from_value(value).map_err(|e| NerfError::InvalidInput(format!("invalid override: {e}")))
}

fn read_json<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path).map_err(|e| NerfError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| NerfError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| NerfError::io(path, e))
}

fn cmd_fit(a: FitArgs, quiet: bool) -> Result<()> {
    let mut config: NerfPlusConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => NerfPlusConfig::default(),
    };
    config = apply_overrides(&config, &a.overrides)?;
    if let Some(v) = a.n_trees {
        config.n_trees = v;
        config.trees_to_tune = config.trees_to_tune.min(v);
    }
    if let Some(v) = a.embedding_dim {
        config.embedding_dim = v;
    }
    if let Some(v) = a.lambda_alpha {
        config.penalty_grid.lambda_alpha = vec![v];
    }
    if let Some(v) = a.lambda_beta {
        config.penalty_grid.lambda_beta = vec![v];
    }
    if let Some(v) = a.lambda_gamma {
        config.penalty_grid.lambda_gamma = vec![v];
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    let (names, _) = load_features(&a.features)?;
    let dataset = load_dataset(&a.features, &a.response)?;
    let network = load_network(&a.edges, dataset.n_samples())?;
    let model = fit_named(&dataset, &network, &config, Some(names))?;
    let text = model.to_json()?;
    NerfPlusModel::from_json(&text)?;
    write_text(&a.out, &text)?;
    let fitted = model.predict_training()?.predictions;
    let r2 = r_squared(&dataset.response, &fitted, dataset.response.mean());
    println!("training R2: {r2:.6}");
    let k = config.trees_to_tune.max(1).min(model.n_trees());
    for (t, fit) in model.trees.iter().take(k).enumerate() {
        let p = fit.penalty;
        println!(
            "tree {t}: lambda_alpha={} lambda_beta={} lambda_gamma={}",
            p.lambda_alpha, p.lambda_beta, p.lambda_gamma
        );
    }
    if !quiet {
        eprintln!("wrote {}", a.out.display());
    }
    Ok(())
}

struct NodeInputs {
    model: NerfPlusModel,
    features: nalgebra::DMatrix<f64>,
    network: Network,
    train_index: Vec<usize>,
}

fn load_train_index(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| NerfError::io(path, e))?;
    text.split_whitespace()
        .enumerate()
        .map(|(k, tok)| {
            tok.parse().map_err(|_| NerfError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("`{tok}` is not a node index"),
            })
        })
        .collect()
}

fn load_nodes(a: &NodeArgs) -> Result<NodeInputs> {
    let model = NerfPlusModel::load(&a.model)?;
    let (_, features) = load_features(&a.features)?;
    let network = load_network(&a.edges, features.nrows())?;
    let train_index = load_train_index(&a.train_index)?;
    if train_index.len() != model.n_train() {
        return Err(NerfError::DimensionMismatch(format!(
            "train index lists {} nodes, the model was trained on {}",
            train_index.len(),
            model.n_train()
        )));
    }
    let mut is_train = vec![false; network.n_nodes()];
    for &i in &train_index {
        if i >= network.n_nodes() {
            return Err(NerfError::InvalidInput(format!("training node {i} has no feature row")));
        }
        is_train[i] = true;
    }
    let degrees = network.degrees();
    if let Some(i) = (0..network.n_nodes()).find(|&i| !is_train[i] && degrees[i] == 0.0) {
        return Err(NerfError::InvalidNetwork(format!("node {i} does not appear in {}", a.edges.display())));
    }
    Ok(NodeInputs {
        model,
        features,
        network,
        train_index,
    })
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let inputs = load_nodes(&a.nodes)?;
    let pr = inputs.model.predict(&inputs.features, &inputs.network, &inputs.train_index)?;
    let mut text = String::from("node_index,prediction,alpha_part,embedding_part,feature_part\n");
    for k in 0..pr.predictions.len() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            pr.node_indices[k], pr.predictions[k], pr.cohesion_part[k], pr.embedding_part[k], pr.feature_part[k]
        ));
    }
    write_text(&a.out, &text)
}

fn select_rows(rows: Rows, n: usize, train_index: &[usize]) -> Vec<usize> {
    let mut is_train = vec![false; n];
    for &i in train_index {
        is_train[i] = true;
    }
    match rows {
        Rows::Test => (0..n).filter(|&i| !is_train[i]).collect(),
        Rows::Train => train_index.to_vec(),
        Rows::All => (0..n).collect(),
    }
}

fn cmd_interpret(a: InterpretArgs) -> Result<()> {
    let inputs = load_nodes(&a.nodes)?;
    let model = &inputs.model;
    let all = model.transform_nodes(&inputs.features, &inputs.network, &inputs.train_index)?;
    let rows = select_rows(a.rows, inputs.network.n_nodes(), &inputs.train_index);
    if rows.is_empty() {
        return Err(NerfError::InvalidInput("no evaluation rows selected".into()));
    }
    let blocks = crate::model::NodeBlocks {
        extended: rows_of(&all.extended, &rows),
        alpha: all
            .alpha
            .iter()
            .map(|a| if a.is_empty() { a.clone() } else { entries_of(a, &rows) })
            .collect(),
        stumps: all.stumps.iter().map(|s| rows_of(s, &rows)).collect(),
        node_indices: rows.clone(),
    };
    if a.mode == Mode::Local {
        return local_importance(model, &blocks)?.write_csv(&a.out);
    }
    let path = a
        .response
        .as_ref()
        .ok_or_else(|| NerfError::InvalidInput("--response is required for global importance".into()))?;
    let y: DVector<f64> = load_response(path)?;
    if y.len() != inputs.network.n_nodes() {
        return Err(NerfError::DimensionMismatch(format!(
            "{} responses for {} nodes",
            y.len(),
            inputs.network.n_nodes()
        )));
    }
    let y = entries_of(&y, &rows);
    let targets = Target::all(model.n_features());
    let report = match a.mode {
        Mode::Permutation => {
            let metric = match a.metric {
                MetricArg::Rmse => Metric::Rmse,
                MetricArg::R2 => Metric::R2,
            };
            permutation_importance(model, &blocks, &y, &targets, a.permutations, metric, a.seed)?
        }
        _ => mdi_plus(model, &blocks, &y, &targets)?,
    };
    report.save(&a.out)
}

fn cmd_influence(a: InfluenceArgs) -> Result<()> {
    let inputs = load_nodes(&a.nodes)?;
    let test = select_rows(Rows::Test, inputs.network.n_nodes(), &inputs.train_index);
    if test.is_empty() {
        return Err(NerfError::InvalidInput("influence needs at least one node outside the training index".into()));
    }
    let report = sample_influence(
        &inputs.model,
        &rows_of(&inputs.features, &test),
        &inputs.network,
        &inputs.train_index,
        InfluenceOptions {
            max_trees: a.max_trees,
        },
    )?;
    if report.ranks.len() != inputs.model.n_train() {
        return Err(NerfError::InvalidInput("influence report has the wrong length".into()));
    }
    report.write_csv(&a.out)
}

fn cmd_simulate(a: SimulateArgs, quiet: bool) -> Result<()> {
    let configs = load_sim_configs(&a.config)?
        .iter()
        .map(|c| apply_overrides(c, &a.overrides))
        .collect::<Result<Vec<_>>>()?;
    let report = run_scenarios(&configs)?;
    report.write(&a.out_dir)?;
    if !quiet {
        for s in &report.scenarios {
            for row in &s.summary {
                eprintln!("{}: {} {} = {:.4} (se {:.4})", s.config.name, row.method, row.metric, row.mean, row.stderr);
            }
        }
    }
    Ok(())
}
