//! The `pathwalk` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{reweighted_weights, uniform_weights, BilinearConfig, BilinearScorer};
use crate::config::{ConfigError, Dataset, RunConfig};
use crate::data::io::{load_embeddings, load_graph, load_samples, save_graph, save_samples, write_coords, write_traces};
use crate::data::navigation::PREFIX_LEN;
use crate::data::{edge_click_features, generate_gps, generate_planar, load_navigation_paths, DataError};
use crate::graph::{degree_features, Graph, NodeDistribution, NodeId, PathSample};
use crate::metrics::{evaluate_model, evaluate_scorer, format_table, negatives_for, scorer_prefix, FixedWeights, MetricReport};
use crate::nbwalk::{most_likely_suffix, sample_suffix, step_prob, target_marginal, LatentGraph, MarginalMode, SampleOutcome, WalkError, WalkRule};
use crate::neural::{Checkpoint, NeuralError};
use crate::training::{train, write_loss_curve, Model, TrainError, TrainSample};

pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSS_CURVE: &str = "loss_curve.tsv";
pub const METRICS: &str = "metrics.json";

#[derive(Parser, Debug)]
#[command(name = "pathwalk", version, about = "Path extrapolation with non-backtracking walks on a learned latent graph")]
struct Cli {
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a dataset to `data_dir`.
    Generate(ConfigArg),
    /// Trains a model on the train split; writes a checkpoint and loss curve to `run_dir`.
    Train(ConfigArg),
    /// Scores the trained model and the baselines on a split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Prints the top-k suffixes of one trajectory as JSON Lines.
    Predict {
        #[command(flatten)]
        query: Query,
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// Random walks drawn to find candidates beyond the most likely one.
        #[arg(long, default_value_t = 200)]
        draws: usize,
    },
    /// Prints seeded suffix draws of one trajectory as JSON Lines.
    Sample {
        #[command(flatten)]
        query: Query,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Writes the latent edge weights and the predicted node marginal of one trajectory.
    ExportLatent {
        #[command(flatten)]
        query: Query,
        /// Output directory (default: `run_dir`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct Query {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "test")]
    split: String,
    /// Sample file to read instead of the split in `data_dir`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Overrides the sample's horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(thiserror::Error, Debug)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn neural_is_numeric(e: &NeuralError) -> bool {
    matches!(e, NeuralError::NonFinite(_))
}

fn walk_is_numeric(e: &WalkError) -> bool {
    match e {
        WalkError::InvalidWeights(_) => true,
        WalkError::Neural(n) => neural_is_numeric(n),
        _ => false,
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let numeric = match &e {
            TrainError::NonFiniteLoss { .. } => true,
            TrainError::Neural(n) => neural_is_numeric(n),
            TrainError::Walk(w) => walk_is_numeric(w),
            TrainError::Encode(crate::encoder::EncodeError::Neural(n)) => neural_is_numeric(n),
            TrainError::Encode(crate::encoder::EncodeError::Walk(w)) => walk_is_numeric(w),
            _ => false,
        };
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            _ if numeric => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<WalkError> for CliError {
    fn from(e: WalkError) -> Self {
        TrainError::Walk(e).into()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    DataError::io(path, e).into()
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 success, 1 config error, 2 data error, 3 numeric abort.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(CliError::Config(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Generate(c) => generate(&load_config(&c.config)?),
        Command::Train(c) => train_cmd(&load_config(&c.config)?, &mut out),
        Command::Evaluate { config, split } => evaluate(&load_config(&config.config)?, &split, &mut out),
        Command::Predict { query, top, draws } => predict(&query, top, draws, &mut out),
        Command::Sample { query, count, seed } => sample_cmd(&query, count, seed, &mut out),
        Command::ExportLatent { query, out_dir } => export_latent(&query, out_dir, &mut out),
    }
}

/// Reads a config file; relative paths inside it resolve against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Value { key: "--config".into(), msg: format!("{}: {e}", path.display()) })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(RunConfig::parse(&text)?.with_base(base))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_resolved(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    write_file(&dir.join(RESOLVED_CONFIG), config.resolved_text().as_bytes())
}

fn split_path(config: &RunConfig, split: &str) -> Result<PathBuf, CliError> {
    match split {
        "train" | "valid" | "test" => Ok(config.data_dir().join(format!("{split}.jsonl"))),
        _ => Err(CliError::Config(format!("unknown split `{split}` (expected train, valid or test)"))),
    }
}

fn load_dataset_graph(config: &RunConfig) -> Result<Graph, CliError> {
    let dir = config.data_dir();
    Ok(load_graph(&dir.join("nodes.tsv"), &dir.join("edges.tsv"))?)
}

fn load_split(config: &RunConfig, g: &Graph, split: &str) -> Result<Vec<TrainSample>, CliError> {
    Ok(load_samples(&split_path(config, split)?, g)?)
}

/// Seeded shuffle cut into train / valid / test by the configured fractions.
fn split_samples(config: &RunConfig, samples: Vec<TrainSample>, paths: Vec<Vec<NodeId>>) -> Result<[Vec<(TrainSample, Vec<NodeId>)>; 3], CliError> {
    let mut items: Vec<_> = samples.into_iter().zip(paths).collect();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed()?));
    let n = items.len();
    let n_train = (config.get::<f64>("train_fraction")? * n as f64).round() as usize;
    let n_valid = ((config.get::<f64>("valid_fraction")? * n as f64).round() as usize).min(n - n_train.min(n));
    let test = items.split_off((n_train + n_valid).min(n));
    let valid = items.split_off(n_train.min(n));
    Ok([items, valid, test])
}

fn generate(config: &RunConfig) -> Result<(), CliError> {
    let dir = config.data_dir();
    make_dir(&dir)?;
    let (graph, samples, paths) = match config.dataset()? {
        Dataset::Planar => {
            let d = generate_planar(&config.planar()?)?;
            let mut w = crate::data::io::create(&dir.join("coords.tsv"))?;
            write_coords(&mut w, &d.coords).and_then(|_| w.flush()).map_err(|e| io_err(&dir.join("coords.tsv"), e))?;
            (d.graph, d.samples, d.paths)
        }
        Dataset::Gps => {
            let d = generate_gps(&config.gps()?)?;
            let coords_path = dir.join("coords.tsv");
            let mut w = crate::data::io::create(&coords_path)?;
            write_coords(&mut w, &d.coords).and_then(|_| w.flush()).map_err(|e| io_err(&coords_path, e))?;
            let traces_path = dir.join("traces.tsv");
            let mut w = crate::data::io::create(&traces_path)?;
            write_traces(&mut w, &d.traces).and_then(|_| w.flush()).map_err(|e| io_err(&traces_path, e))?;
            (d.graph, d.samples, d.paths)
        }
        Dataset::Navigation => return generate_navigation(config, &dir),
    };
    let splits = split_samples(config, samples, paths)?;
    write_splits(&dir, &splits)?;
    save_graph(&graph, &dir.join("nodes.tsv"), &dir.join("edges.tsv"))?;
    write_resolved(&dir, config)
}

fn write_splits(dir: &Path, splits: &[Vec<(TrainSample, Vec<NodeId>)>; 3]) -> Result<(), CliError> {
    for (name, items) in ["train", "valid", "test"].iter().zip(splits) {
        let samples: Vec<TrainSample> = items.iter().map(|(s, _)| s.clone()).collect();
        save_samples(&dir.join(format!("{name}.jsonl")), &samples)?;
    }
    Ok(())
}

fn required_path(config: &RunConfig, key: &str) -> Result<PathBuf, CliError> {
    config.path(key).ok_or_else(|| CliError::Config(format!("`{key}` is required for dataset = navigation")))
}

fn generate_navigation(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut graph = load_graph(&required_path(config, "nodes_file")?, &required_path(config, "edges_file")?)?;
    if graph.node_features().dim() == 0 {
        let features = degree_features(&graph);
        graph = graph.with_node_features(features).map_err(DataError::from)?;
    }
    let set = load_navigation_paths(&required_path(config, "paths_file")?, &graph)?;
    if set.skipped > 0 {
        eprintln!("skipped {} paths shorter than {} nodes", set.skipped, PREFIX_LEN + 1);
    }
    let splits = split_samples(config, set.samples, set.paths)?;
    let train_paths =
        splits[0].iter().map(|(_, p)| PathSample::new(&graph, p.clone())).collect::<Result<Vec<_>, _>>().map_err(DataError::from)?;
    let graph = edge_click_features(&graph, &train_paths)?;
    write_splits(dir, &splits)?;
    save_graph(&graph, &dir.join("nodes.tsv"), &dir.join("edges.tsv"))?;
    write_resolved(dir, config)
}

fn train_cmd(config: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let g = load_dataset_graph(config)?;
    let train_set = load_split(config, &g, "train")?;
    let valid_set = load_split(config, &g, "valid")?;
    let outcome = train(&g, &train_set, &valid_set, &config.train()?)?;
    let dir = config.run_dir();
    make_dir(&dir)?;
    let ckpt = Checkpoint::from_store(&outcome.model.params, config.seed()?, &config.hash());
    write_file(&dir.join(CHECKPOINT), &ckpt.to_bytes())?;
    let mut curve = Vec::new();
    write_loss_curve(&mut curve, &outcome.curve).map_err(|e| io_err(&dir.join(LOSS_CURVE), e))?;
    write_file(&dir.join(LOSS_CURVE), &curve)?;
    write_resolved(&dir, config)?;
    let last = outcome.curve.last();
    writeln!(
        out,
        "trained {} epochs on {} samples; final train loss {}; kept epoch {}",
        outcome.curve.len(),
        train_set.len(),
        last.map_or("-".into(), |r| format!("{:.4}", r.train_loss)),
        outcome.best_epoch
    )
    .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn load_model(config: &RunConfig, g: &Graph) -> Result<Model, CliError> {
    let path = config.run_dir().join(CHECKPOINT);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if ckpt.header.config_hash != config.hash() {
        return Err(CliError::Config(format!("{} was trained with a different config", path.display())));
    }
    Ok(Model::from_checkpoint(g, config.encoder()?, &ckpt)?)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    split: &'a str,
    reports: &'a [MetricReport],
}

fn evaluate(config: &RunConfig, split: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let g = load_dataset_graph(config)?;
    let samples = load_split(config, &g, split)?;
    let train_set = load_split(config, &g, "train")?;
    let model = load_model(config, &g)?;
    let negatives = negatives_for(&g, &samples, config.seed()?);

    let mut reports = Vec::new();
    let uniform = FixedWeights::from_latent(&uniform_weights(&g, true));
    reports.push(evaluate_model(&g, "uniform", &uniform, &samples, &negatives)?);
    let uniform_nb = FixedWeights::from_latent(&uniform_weights(&g, false));
    reports.push(evaluate_model(&g, "uniform_nb", &uniform_nb, &samples, &negatives)?);
    let walked: Vec<PathSample> = train_set
        .iter()
        .filter_map(|s| {
            let suffix = s.true_suffix()?;
            let mut nodes = s.history().to_vec();
            nodes.extend_from_slice(suffix.nodes());
            Some(PathSample::unchecked(nodes))
        })
        .collect();
    let reweighted = FixedWeights::from_latent(&reweighted_weights(&g, &walked, config.get("reweight_alpha")?)?);
    reports.push(evaluate_model(&g, "reweighted", &reweighted, &samples, &negatives)?);
    if let Some(path) = config.path("embeddings_file") {
        let bilinear_cfg = BilinearConfig {
            prefix_len: PREFIX_LEN,
            lr: config.get("bilinear_lr")?,
            epochs: config.get("bilinear_epochs")?,
            seed: config.seed()?,
            ..BilinearConfig::default()
        };
        let mut scorer = BilinearScorer::new(load_embeddings(&path, g.node_count())?, bilinear_cfg.prefix_len);
        let pairs: Vec<(Vec<NodeId>, NodeId)> =
            train_set.iter().filter_map(|s| Some((scorer_prefix(s), s.true_target()?.argmax()))).collect();
        scorer.train(&pairs, &bilinear_cfg)?;
        reports.push(evaluate_scorer("bilinear", &scorer, &samples, &negatives)?);
    }
    reports.push(evaluate_model(&g, "model", &model, &samples, &negatives)?);

    let dir = config.run_dir();
    make_dir(&dir)?;
    let mut json = serde_json::to_string_pretty(&MetricsFile { split, reports: &reports })
        .map_err(|e| CliError::Data(format!("metrics: {e}")))?;
    json.push('\n');
    write_file(&dir.join(METRICS), json.as_bytes())?;
    write!(out, "{split} split, {} samples\n{}", samples.len(), format_table(&reports)).map_err(|e| io_err(Path::new("<stdout>"), e))
}

struct Loaded {
    config: RunConfig,
    graph: Graph,
    sample: TrainSample,
    horizon: usize,
}

fn load_query(q: &Query) -> Result<Loaded, CliError> {
    let config = load_config(&q.config.config)?;
    let graph = load_dataset_graph(&config)?;
    let path = match &q.input {
        Some(p) => p.clone(),
        None => split_path(&config, &q.split)?,
    };
    let mut samples = load_samples(&path, &graph)?;
    if q.index >= samples.len() {
        return Err(CliError::Data(format!("{}: index {} out of range ({} samples)", path.display(), q.index, samples.len())));
    }
    let sample = samples.swap_remove(q.index);
    let horizon = q.horizon.unwrap_or(sample.horizon());
    if horizon == 0 {
        return Err(CliError::Config("horizon must be at least 1".into()));
    }
    Ok(Loaded { config, graph, sample, horizon })
}

/// `ln w(first edge) + sum ln p(step)` of `suffix` leaving `start`,
/// accumulated left to right; `None` if some step is impossible.
fn suffix_log_likelihood(lat: &LatentGraph<'_>, start: NodeId, suffix: &[NodeId]) -> Result<Option<f64>, WalkError> {
    let g = lat.graph();
    let mut prev = None;
    let mut from = start;
    let mut total = 0.0;
    for &v in suffix {
        let Some(e) = g.find_edge(from, v) else { return Ok(None) };
        let p = step_prob(lat, prev, e)?;
        if p <= 0.0 {
            return Ok(None);
        }
        total += p.ln();
        prev = Some(e);
        from = v;
    }
    Ok(Some(total))
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Data(format!("json: {e}")))?;
    writeln!(out, "{text}").map_err(|e| io_err(Path::new("<stdout>"), e))
}

#[derive(Serialize)]
struct Prediction<'a> {
    suffix: &'a [NodeId],
    log_likelihood: f64,
}

fn predict(q: &Query, top: usize, draws: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let Loaded { config, graph, sample, horizon } = load_query(q)?;
    let model = load_model(&config, &graph)?;
    let lat = model.latent(&graph, sample.trajectory(), WalkRule::NonBacktracking)?;
    let v_t = sample.trajectory().last().argmax();
    let mut candidates: Vec<Vec<NodeId>> = match most_likely_suffix(&lat, v_t, horizon) {
        Ok((best, _)) => vec![best.nodes().to_vec()],
        Err(WalkError::NoPath { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed()?);
    let start = NodeDistribution::dirac(v_t);
    for _ in 0..draws {
        if let SampleOutcome::Path { suffix, .. } = sample_suffix(&lat, &start, horizon, &mut rng)? {
            candidates.push(suffix.nodes().to_vec());
        }
    }
    candidates.sort();
    candidates.dedup();
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        if let Some(ll) = suffix_log_likelihood(&lat, v_t, &c)? {
            scored.push((c, ll));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (suffix, ll) in scored.into_iter().take(top) {
        json_line(out, &Prediction { suffix: &suffix, log_likelihood: ll })?;
    }
    Ok(())
}

fn sample_cmd(q: &Query, count: usize, seed: Option<u64>, out: &mut dyn Write) -> Result<(), CliError> {
    let Loaded { config, graph, sample, horizon } = load_query(q)?;
    let model = load_model(&config, &graph)?;
    let lat = model.latent(&graph, sample.trajectory(), WalkRule::NonBacktracking)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.map_or_else(|| config.seed(), Ok)?);
    for _ in 0..count {
        let line = match sample_suffix(&lat, sample.trajectory().last(), horizon, &mut rng)? {
            SampleOutcome::Path { start, suffix } => serde_json::json!({ "start": start, "suffix": suffix.nodes() }),
            SampleOutcome::DeadEnd { start, steps } => serde_json::json!({ "start": start, "dead_end_after": steps }),
        };
        json_line(out, &line)?;
    }
    Ok(())
}

fn export_latent(q: &Query, out_dir: Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let Loaded { config, graph, sample, horizon } = load_query(q)?;
    let model = load_model(&config, &graph)?;
    let lat = model.latent(&graph, sample.trajectory(), WalkRule::NonBacktracking)?;
    let x_hat = target_marginal(&lat, sample.trajectory().last(), horizon, MarginalMode::Exact)?;
    let dir = out_dir.unwrap_or_else(|| config.run_dir());
    make_dir(&dir)?;
    let mut edges = String::from("edge_id\tsrc\tdst\tweight\n");
    for (e, &(s, d)) in graph.edges().iter().enumerate() {
        edges.push_str(&format!("{e}\t{s}\t{d}\t{}\n", lat.weight(e)));
    }
    let mut marginal = String::from("node_id\tmass\n");
    for (v, m) in x_hat.iter().enumerate() {
        marginal.push_str(&format!("{v}\t{m}\n"));
    }
    let (edges_path, marginal_path) = (dir.join("latent_edges.tsv"), dir.join("marginal.tsv"));
    write_file(&edges_path, edges.as_bytes())?;
    write_file(&marginal_path, marginal.as_bytes())?;
    write_resolved(&dir, &config)?;
    writeln!(out, "wrote {} and {}", edges_path.display(), marginal_path.display()).map_err(|e| io_err(Path::new("<stdout>"), e))
}
