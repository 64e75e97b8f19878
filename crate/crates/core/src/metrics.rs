//! Evaluation metrics and the report written by `evaluate`.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BilinearScorer;
use crate::graph::{Graph, NodeDistribution, NodeId, Trajectory};
use crate::nbwalk::{step_prob, target_marginal, LatentGraph, MarginalMode, WalkRule};
use crate::training::{suffix_nll_loss, Model, TrainError, TrainSample, PROB_CLAMP};

/// Anything that turns a trajectory into a latent graph.
pub trait WalkModel: Sync {
    fn latent<'g>(&self, g: &'g Graph, traj: &Trajectory) -> Result<LatentGraph<'g>, TrainError>;
}

impl WalkModel for Model {
    fn latent<'g>(&self, g: &'g Graph, traj: &Trajectory) -> Result<LatentGraph<'g>, TrainError> {
        Model::latent(self, g, traj, WalkRule::NonBacktracking)
    }
}

/// The same weights for every trajectory (the non-learned baselines).
#[derive(Clone, Debug, PartialEq)]
pub struct FixedWeights {
    pub weights: Vec<f64>,
    pub rule: WalkRule,
}

impl FixedWeights {
    pub fn from_latent(lat: &LatentGraph<'_>) -> Self {
        Self { weights: lat.weights().to_vec(), rule: lat.rule() }
    }
}

impl WalkModel for FixedWeights {
    fn latent<'g>(&self, g: &'g Graph, _traj: &Trajectory) -> Result<LatentGraph<'g>, TrainError> {
        Ok(LatentGraph::new(g, self.weights.clone(), self.rule)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(self, other: Tally) -> Tally {
        Tally { correct: self.correct + other.correct, total: self.total + other.total }
    }

    fn record(&mut self, hit: bool) {
        self.total += 1;
        self.correct += hit as usize;
    }

    /// `None` when nothing was counted.
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// Crossroad decisions along `path` from position `start` on. A position
/// counts when its node has out-degree at least 3; it is correct when the
/// true next edge has the highest step probability, ties going to the
/// smallest edge id.
pub fn choice_tally(lat: &LatentGraph<'_>, path: &[NodeId], start: usize) -> Result<Tally, TrainError> {
    let g = lat.graph();
    let edges = crate::graph::path_edges(g, path)?;
    let mut tally = Tally::default();
    for i in start..edges.len() {
        let v = path[i];
        let out = g.out_edges(v);
        if out.len() < 3 {
            continue;
        }
        let prev = (i > 0).then(|| edges[i - 1]);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &e in out {
            let p = step_prob(lat, prev, e)?;
            if p > best.0 {
                best = (p, e);
            }
        }
        tally.record(best.1 == edges[i]);
    }
    Ok(tally)
}

/// Choice accuracy over every non-terminal position of `paths`.
pub fn choice_accuracy(lat: &LatentGraph<'_>, paths: &[Vec<NodeId>]) -> Result<Tally, TrainError> {
    paths.iter().try_fold(Tally::default(), |acc, p| Ok(acc.add(choice_tally(lat, p, 0)?)))
}

/// Mass of `x_hat` on the support of `target`.
pub fn target_probability(x_hat: &[f64], target: &NodeDistribution) -> f64 {
    target.support().map(|v| x_hat[v]).sum()
}

/// `target` strictly outscores every other node.
pub fn precision_hit(x_hat: &[f64], target: NodeId) -> bool {
    x_hat.iter().enumerate().all(|(v, &p)| v == target || x_hat[target] > p)
}

/// `target` strictly outscores `negative`.
pub fn two_target_hit(x_hat: &[f64], target: NodeId, negative: NodeId) -> bool {
    x_hat[target] > x_hat[negative]
}

/// For each `(start, target)` pair draws a node at the same BFS distance
/// from `start` as `target` that is itself a target of some pair. `None`
/// when no such node exists.
pub fn sample_negatives(g: &Graph, pairs: &[Option<(NodeId, NodeId)>], seed: u64) -> Vec<Option<NodeId>> {
    let mut is_target = vec![false; g.node_count()];
    for &(_, t) in pairs.iter().flatten() {
        is_target[t] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs
        .iter()
        .map(|pair| {
            let (start, target) = (*pair)?;
            let dist = g.bfs_distances(start);
            let want = dist[target]?;
            let candidates: Vec<NodeId> =
                (0..g.node_count()).filter(|&v| v != target && is_target[v] && dist[v] == Some(want)).collect();
            candidates.choose(&mut rng).copied()
        })
        .collect()
}

/// Start node (for negative sampling) and dirac target of a sample.
pub fn ranking_pair(sample: &TrainSample) -> Option<(NodeId, NodeId)> {
    let target = dirac_node(sample.true_target()?)?;
    let start = match sample.history().first() {
        Some(&v) => v,
        None => sample.trajectory().observations()[0].argmax(),
    };
    Some((start, target))
}

fn dirac_node(d: &NodeDistribution) -> Option<NodeId> {
    match d.entries() {
        [(v, _)] => Some(*v),
        _ => None,
    }
}

/// Per-sample contributions, folded in sample order into a report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleScores {
    pub suffix_nll: Option<f64>,
    pub choice: Tally,
    pub target_probability: Option<f64>,
    pub target_cross_entropy: Option<f64>,
    pub precision: Option<bool>,
    pub two_target: Option<bool>,
}

impl SampleScores {
    /// Target-side scores from a predicted node distribution.
    pub fn from_prediction(x_hat: &[f64], sample: &TrainSample, negative: Option<NodeId>) -> Self {
        let mut s = SampleScores::default();
        if let Some(target) = sample.true_target() {
            s.target_probability = Some(target_probability(x_hat, target));
            s.target_cross_entropy =
                Some(-target.entries().iter().map(|&(v, y)| y * (x_hat[v] + PROB_CLAMP).ln()).sum::<f64>());
            if let Some(t) = dirac_node(target) {
                s.precision = Some(precision_hit(x_hat, t));
                s.two_target = negative.map(|n| two_target_hit(x_hat, t, n));
            }
        }
        s
    }
}

/// Scores one sample under a walk model.
pub fn score_sample(
    g: &Graph,
    model: &dyn WalkModel,
    sample: &TrainSample,
    negative: Option<NodeId>,
) -> Result<SampleScores, TrainError> {
    let lat = model.latent(g, sample.trajectory())?;
    let mut scores = match sample.true_target() {
        Some(_) => {
            let x_hat = target_marginal(&lat, sample.trajectory().last(), sample.horizon(), MarginalMode::Exact)?;
            SampleScores::from_prediction(&x_hat, sample, negative)
        }
        None => SampleScores::default(),
    };
    if let Some(suffix) = sample.true_suffix() {
        scores.suffix_nll = Some(suffix_nll_loss(&lat, sample)?);
        let history = sample.history();
        let path_and_start = if !history.is_empty() {
            Some((history.to_vec(), history.len() - 1))
        } else {
            dirac_node(sample.trajectory().last()).map(|v| (vec![v], 0))
        };
        if let Some((mut path, start)) = path_and_start {
            path.extend_from_slice(suffix.nodes());
            scores.choice = choice_tally(&lat, &path, start)?;
        }
    }
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    /// Percent of crossroad decisions.
    pub choice_accuracy: Option<f64>,
    pub choice_count: usize,
    pub target_probability: Option<f64>,
    pub target_cross_entropy: Option<f64>,
    pub target_count: usize,
    pub suffix_nll: Option<f64>,
    /// `exp(-suffix_nll)`: geometric mean of suffix probabilities.
    pub suffix_geometric_probability: Option<f64>,
    pub suffix_count: usize,
    pub precision_at_1: Option<f64>,
    pub precision_count: usize,
    pub two_target_accuracy: Option<f64>,
    pub two_target_count: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    ((count > 0).then(|| sum / count as f64), count)
}

impl MetricReport {
    pub fn from_scores(model: &str, scores: &[SampleScores]) -> Self {
        let choice = scores.iter().fold(Tally::default(), |a, s| a.add(s.choice));
        let (suffix_nll, suffix_count) = mean(scores.iter().filter_map(|s| s.suffix_nll));
        let (target_probability, target_count) = mean(scores.iter().filter_map(|s| s.target_probability));
        let (target_cross_entropy, _) = mean(scores.iter().filter_map(|s| s.target_cross_entropy));
        let mut precision = Tally::default();
        let mut two = Tally::default();
        for s in scores {
            if let Some(h) = s.precision {
                precision.record(h);
            }
            if let Some(h) = s.two_target {
                two.record(h);
            }
        }
        MetricReport {
            model: model.to_string(),
            choice_accuracy: choice.percent(),
            choice_count: choice.total,
            target_probability,
            target_cross_entropy,
            target_count,
            suffix_nll,
            suffix_geometric_probability: suffix_nll.map(|x| (-x).exp()),
            suffix_count,
            precision_at_1: precision.percent(),
            precision_count: precision.total,
            two_target_accuracy: two.percent(),
            two_target_count: two.total,
        }
    }
}

/// Negatives shared by every model evaluated on `samples` with `seed`.
pub fn negatives_for(g: &Graph, samples: &[TrainSample], seed: u64) -> Vec<Option<NodeId>> {
    let pairs: Vec<_> = samples.iter().map(ranking_pair).collect();
    sample_negatives(g, &pairs, seed)
}

/// Evaluates a walk model on every sample (in parallel, folded in order).
pub fn evaluate_model(
    g: &Graph,
    name: &str,
    model: &dyn WalkModel,
    samples: &[TrainSample],
    negatives: &[Option<NodeId>],
) -> Result<MetricReport, TrainError> {
    let scores = samples
        .par_iter()
        .zip(negatives.par_iter())
        .map(|(s, &neg)| score_sample(g, model, s, neg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricReport::from_scores(name, &scores))
}

/// Prefix handed to the bilinear scorer: the history when known, otherwise
/// the most likely node of each observation.
pub fn scorer_prefix(sample: &TrainSample) -> Vec<NodeId> {
    if sample.history().is_empty() {
        sample.trajectory().observations().iter().map(NodeDistribution::argmax).collect()
    } else {
        sample.history().to_vec()
    }
}

/// Target-side metrics of the bilinear scorer.
pub fn evaluate_scorer(
    name: &str,
    scorer: &BilinearScorer,
    samples: &[TrainSample],
    negatives: &[Option<NodeId>],
) -> Result<MetricReport, TrainError> {
    let scores = samples
        .par_iter()
        .zip(negatives.par_iter())
        .map(|(s, &neg)| Ok(SampleScores::from_prediction(&scorer.predict(&scorer_prefix(s))?, s, neg)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(MetricReport::from_scores(name, &scores))
}

/// Aligned text table with one column per report.
pub fn format_table(reports: &[MetricReport]) -> String {
    fn cell(v: Option<f64>, digits: usize) -> String {
        v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
    }
    let rows: Vec<(&str, Box<dyn Fn(&MetricReport) -> String>)> = vec![
        ("choice accuracy (%)", Box::new(|r| cell(r.choice_accuracy, 1))),
        ("  decisions", Box::new(|r| r.choice_count.to_string())),
        ("target probability", Box::new(|r| cell(r.target_probability, 3))),
        ("target cross entropy", Box::new(|r| cell(r.target_cross_entropy, 3))),
        ("suffix NLL", Box::new(|r| cell(r.suffix_nll, 3))),
        ("  geometric mean prob", Box::new(|r| cell(r.suffix_geometric_probability, 3))),
        ("precision@1 (%)", Box::new(|r| cell(r.precision_at_1, 1))),
        ("2-targets accuracy (%)", Box::new(|r| cell(r.two_target_accuracy, 1))),
        ("  pairs", Box::new(|r| r.two_target_count.to_string())),
    ];
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = reports.iter().map(|r| r.model.len().max(8)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for (r, w) in reports.iter().zip(&col_w) {
        let _ = write!(out, "  {:>w$}", r.model);
    }
    out.push('\n');
    for (label, f) in &rows {
        let _ = write!(out, "{label:label_w$}");
        for (r, w) in reports.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", f(r));
        }
        out.push('\n');
    }
    out
}
