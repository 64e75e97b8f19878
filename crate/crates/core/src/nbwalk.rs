//! Non-backtracking walks on a latent graph.
//!
//! A walker at node `v` leaves along an out-edge `e` with probability `w(e)`.
//! Every later move from edge `i -> j` to edge `j -> l` has probability
//! `w(j -> l) / (1 - w(j -> i))` and is zero when `l == i`; the denominator
//! term is zero when `j -> i` does not exist. Walks that run out of legal
//! continuations lose their mass.
//!
//! The differentiable entry points ([`suffix_likelihood_var`],
//! [`target_marginal_var`]) record a single tape node whose vector-Jacobian
//! product is written out by hand.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{path_edges, EdgeId, Graph, GraphError, NodeDistribution, NodeId, PathSample};
use crate::neural::{Matrix, NeuralError, Tape, Var, Vjp};

/// Continuations whose denominator `1 - w(back)` falls below this are dead.
pub const DEAD_END_EPS: f64 = 1e-12;
/// Allowed deviation of an out-edge weight group from unit mass.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum WalkError {
    #[error("edge {next} does not continue edge {prev}")]
    NotConsecutive { prev: EdgeId, next: EdgeId },
    #[error("suffix is empty")]
    EmptySuffix,
    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("no non-backtracking continuation of length {h} from node {node}")]
    NoPath { node: NodeId, h: usize },
    #[error("invalid latent weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WalkRule {
    /// Immediate reversal is forbidden and the remaining weights renormalised.
    NonBacktracking,
    /// Plain random walk on the weights.
    Backtracking,
}

/// The input graph together with per-edge transition weights.
#[derive(Clone, Debug)]
pub struct LatentGraph<'g> {
    graph: &'g Graph,
    weights: Vec<f64>,
    rule: WalkRule,
}

impl<'g> LatentGraph<'g> {
    /// Checks that weights lie in [0, 1] and that every non-sink node's
    /// out-edge weights sum to one.
    pub fn new(graph: &'g Graph, weights: Vec<f64>, rule: WalkRule) -> Result<Self, WalkError> {
        if weights.len() != graph.edge_count() {
            return Err(WalkError::InvalidWeights(format!(
                "{} weights for {} edges",
                weights.len(),
                graph.edge_count()
            )));
        }
        if let Some(e) = weights.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(WalkError::InvalidWeights(format!("edge {e} has weight {}", weights[e])));
        }
        for v in 0..graph.node_count() {
            let out = graph.out_edges(v);
            if out.is_empty() {
                continue;
            }
            let total: f64 = out.iter().map(|&e| weights[e]).sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(WalkError::InvalidWeights(format!("out-weights of node {v} sum to {total}")));
            }
        }
        Ok(Self { graph, weights, rule })
    }

    /// Uniform distribution over each node's outgoing edges.
    pub fn uniform(graph: &'g Graph, rule: WalkRule) -> Self {
        let weights = graph.edges().iter().map(|&(s, _)| 1.0 / graph.out_degree(s) as f64).collect();
        Self { graph, weights, rule }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, e: EdgeId) -> f64 {
        self.weights[e]
    }

    pub fn rule(&self) -> WalkRule {
        self.rule
    }

    pub fn with_rule(mut self, rule: WalkRule) -> Self {
        self.rule = rule;
        self
    }
}

/// Probability of moving from `prev` onto `next`, assuming they are consecutive.
fn transition(g: &Graph, w: &[f64], rule: WalkRule, prev: EdgeId, next: EdgeId) -> f64 {
    match rule {
        WalkRule::Backtracking => w[next],
        WalkRule::NonBacktracking => {
            let back = g.reverse_edge(prev);
            if back == Some(next) {
                return 0.0;
            }
            let denom = 1.0 - back.map_or(0.0, |b| w[b]);
            if denom < DEAD_END_EPS {
                0.0
            } else {
                w[next] / denom
            }
        }
    }
}

/// Accumulates `scale * d transition / d w` into `grad`.
fn transition_grad(g: &Graph, w: &[f64], rule: WalkRule, prev: EdgeId, next: EdgeId, scale: f64, grad: &mut [f64]) {
    match rule {
        WalkRule::Backtracking => grad[next] += scale,
        WalkRule::NonBacktracking => {
            let back = g.reverse_edge(prev);
            if back == Some(next) {
                return;
            }
            let denom = 1.0 - back.map_or(0.0, |b| w[b]);
            if denom < DEAD_END_EPS {
                return;
            }
            grad[next] += scale / denom;
            if let Some(b) = back {
                grad[b] += scale * w[next] / (denom * denom);
            }
        }
    }
}

/// Step probability `p_tau`: the raw weight on the first move, the
/// renormalised non-backtracking probability afterwards.
pub fn step_prob(lat: &LatentGraph<'_>, prev_edge: Option<EdgeId>, next_edge: EdgeId) -> Result<f64, WalkError> {
    let g = lat.graph;
    if next_edge >= g.edge_count() {
        return Err(WalkError::InvalidWeights(format!("edge {next_edge} out of range")));
    }
    match prev_edge {
        None => Ok(lat.weights[next_edge]),
        Some(prev) => {
            if prev >= g.edge_count() || g.target(prev) != g.source(next_edge) {
                return Err(WalkError::NotConsecutive { prev, next: next_edge });
            }
            Ok(transition(g, &lat.weights, lat.rule, prev, next_edge))
        }
    }
}

/// Edge chains (one per support node with an edge into the suffix) with the
/// mass of their start node.
fn suffix_chains(g: &Graph, x_t: &NodeDistribution, suffix: &[NodeId]) -> Result<Vec<(f64, Vec<EdgeId>)>, WalkError> {
    let first = *suffix.first().ok_or(WalkError::EmptySuffix)?;
    x_t.check_nodes(g)?;
    let tail = path_edges(g, suffix)?;
    Ok(x_t
        .entries()
        .iter()
        .filter_map(|&(v, mass)| {
            let e0 = g.find_edge(v, first)?;
            let mut chain = Vec::with_capacity(suffix.len());
            chain.push(e0);
            chain.extend_from_slice(&tail);
            Some((mass, chain))
        })
        .collect())
}

fn chain_factors(g: &Graph, w: &[f64], rule: WalkRule, chain: &[EdgeId]) -> Vec<f64> {
    let mut factors = Vec::with_capacity(chain.len());
    factors.push(w[chain[0]]);
    for pair in chain.windows(2) {
        factors.push(transition(g, w, rule, pair[0], pair[1]));
    }
    factors
}

fn chains_likelihood(g: &Graph, w: &[f64], rule: WalkRule, chains: &[(f64, Vec<EdgeId>)]) -> f64 {
    chains
        .iter()
        .map(|(mass, chain)| mass * chain_factors(g, w, rule, chain).iter().product::<f64>())
        .sum()
}

/// Likelihood of `suffix` (the next `h` nodes) given the last position `x_t`.
/// Cost is linear in the support of `x_t` times the horizon.
pub fn suffix_likelihood(lat: &LatentGraph<'_>, x_t: &NodeDistribution, suffix: &[NodeId]) -> Result<f64, WalkError> {
    let chains = suffix_chains(lat.graph, x_t, suffix)?;
    Ok(chains_likelihood(lat.graph, &lat.weights, lat.rule, &chains))
}

struct SuffixVjp<'g> {
    graph: &'g Graph,
    rule: WalkRule,
    chains: Vec<(f64, Vec<EdgeId>)>,
}

impl Vjp for SuffixVjp<'_> {
    fn vjp(&self, input: &Matrix, _output: &Matrix, grad_output: &Matrix) -> Matrix {
        let w = input.data();
        let seed = grad_output.data()[0];
        let mut grad = vec![0.0; w.len()];
        for (mass, chain) in &self.chains {
            let factors = chain_factors(self.graph, w, self.rule, chain);
            let k = factors.len();
            // product of all factors except the i-th, without dividing
            let mut prefix = vec![1.0; k + 1];
            for i in 0..k {
                prefix[i + 1] = prefix[i] * factors[i];
            }
            let mut suffix = 1.0;
            for i in (0..k).rev() {
                let others = prefix[i] * suffix;
                let scale = seed * mass * others;
                if scale != 0.0 {
                    if i == 0 {
                        grad[chain[0]] += scale;
                    } else {
                        transition_grad(self.graph, w, self.rule, chain[i - 1], chain[i], scale, &mut grad);
                    }
                }
                suffix *= factors[i];
            }
        }
        Matrix::column(grad)
    }
}

/// Differentiable [`suffix_likelihood`]: `weights` is an `m x 1` tape value.
pub fn suffix_likelihood_var<'g>(
    tape: &mut Tape<'g>,
    weights: Var,
    graph: &'g Graph,
    rule: WalkRule,
    x_t: &NodeDistribution,
    suffix: &[NodeId],
) -> Result<Var, WalkError> {
    check_weight_var(tape, weights, graph)?;
    let chains = suffix_chains(graph, x_t, suffix)?;
    let value = chains_likelihood(graph, tape.value(weights).data(), rule, &chains);
    Ok(tape.custom(weights, Matrix::scalar(value), Box::new(SuffixVjp { graph, rule, chains })))
}

fn check_weight_var(tape: &Tape<'_>, weights: Var, graph: &Graph) -> Result<(), WalkError> {
    let shape = tape.value(weights).shape();
    if shape != (graph.edge_count(), 1) {
        return Err(NeuralError::Shape { op: "latent weights", left: shape, right: (graph.edge_count(), 1) }.into());
    }
    Ok(())
}

/// Sparse matrix of edge-to-edge transition probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct NbTransition {
    rows: Vec<Vec<(EdgeId, f64)>>,
}

impl NbTransition {
    /// Successors of edge `e` with nonzero probability, by ascending edge id.
    pub fn row(&self, e: EdgeId) -> &[(EdgeId, f64)] {
        &self.rows[e]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, from: EdgeId, to: EdgeId) -> f64 {
        self.rows[from].iter().find(|x| x.0 == to).map_or(0.0, |x| x.1)
    }

    pub fn row_sum(&self, e: EdgeId) -> f64 {
        self.rows[e].iter().map(|x| x.1).sum()
    }
}

pub fn build_nb_transition(lat: &LatentGraph<'_>) -> NbTransition {
    let g = lat.graph;
    let rows = (0..g.edge_count())
        .map(|e| {
            g.out_edges(g.target(e))
                .iter()
                .filter_map(|&f| {
                    let p = transition(g, &lat.weights, lat.rule, e, f);
                    (p > 0.0).then_some((f, p))
                })
                .collect()
        })
        .collect();
    NbTransition { rows }
}

/// Sparse mass over edges. Total mass may be below one when walks die.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeDistribution {
    entries: BTreeMap<EdgeId, f64>,
}

impl EdgeDistribution {
    pub fn from_dense(mass: &[f64]) -> Self {
        Self { entries: mass.iter().enumerate().filter(|x| *x.1 > 0.0).map(|(e, &m)| (e, m)).collect() }
    }

    pub fn mass(&self, e: EdgeId) -> f64 {
        self.entries.get(&e).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, f64)> + '_ {
        self.entries.iter().map(|(&e, &m)| (e, m))
    }

    pub fn to_dense(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (e, v) in self.iter() {
            out[e] = v;
        }
        out
    }
}

fn first_step_dense(g: &Graph, w: &[f64], x_t: &NodeDistribution) -> Vec<f64> {
    let mut mass = vec![0.0; g.edge_count()];
    for &(v, xv) in x_t.entries() {
        for &e in g.out_edges(v) {
            mass[e] += xv * w[e];
        }
    }
    mass
}

/// Mass of the first traversed edge: `x_t[src] * w(e)`.
pub fn first_step(lat: &LatentGraph<'_>, x_t: &NodeDistribution) -> Result<EdgeDistribution, WalkError> {
    x_t.check_nodes(lat.graph)?;
    Ok(EdgeDistribution::from_dense(&first_step_dense(lat.graph, &lat.weights, x_t)))
}

/// One forward push of edge mass along legal continuations.
fn propagate(g: &Graph, w: &[f64], rule: WalkRule, mass: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; mass.len()];
    for (e, &me) in mass.iter().enumerate() {
        if me == 0.0 {
            continue;
        }
        for &f in g.out_edges(g.target(e)) {
            let p = transition(g, w, rule, e, f);
            if p > 0.0 {
                next[f] += me * p;
            }
        }
    }
    next
}

fn aggregate_destinations(g: &Graph, mass: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.node_count()];
    for (e, &me) in mass.iter().enumerate() {
        out[g.target(e)] += me;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginalMode {
    /// First move, `h - 1` continuations, then edge mass onto destinations.
    Exact,
    /// First move, `h` continuations, then the normalised transpose of the
    /// node-to-edge lifting as a pseudo-inverse (mass lands on edge sources).
    SourceProjection,
}

/// Node marginal of the walk `h` steps after `x_t`, as a dense vector of
/// length `n`. Mass lost to dead ends is not redistributed.
pub fn target_marginal(
    lat: &LatentGraph<'_>,
    x_t: &NodeDistribution,
    h: usize,
    mode: MarginalMode,
) -> Result<Vec<f64>, WalkError> {
    if h < 1 {
        return Err(WalkError::InvalidHorizon(h));
    }
    x_t.check_nodes(lat.graph)?;
    let (g, w) = (lat.graph, lat.weights.as_slice());
    let mut mass = first_step_dense(g, w, x_t);
    match mode {
        MarginalMode::Exact => {
            for _ in 1..h {
                mass = propagate(g, w, lat.rule, &mass);
            }
            Ok(aggregate_destinations(g, &mass))
        }
        MarginalMode::SourceProjection => {
            for _ in 0..h {
                mass = propagate(g, w, lat.rule, &mass);
            }
            let mut out = vec![0.0; g.node_count()];
            for (v, slot) in out.iter_mut().enumerate() {
                let out_edges = g.out_edges(v);
                let norm: f64 = out_edges.iter().map(|&e| w[e] * w[e]).sum();
                if norm > 0.0 {
                    *slot = out_edges.iter().map(|&e| w[e] * mass[e]).sum::<f64>() / norm;
                }
            }
            Ok(out)
        }
    }
}

/// Rescales a marginal to unit mass (no-op when it is all zero).
pub fn renormalize(marginal: &mut [f64]) {
    let total: f64 = marginal.iter().sum();
    if total > 0.0 {
        marginal.iter_mut().for_each(|x| *x /= total);
    }
}

struct MarginalVjp<'g> {
    graph: &'g Graph,
    rule: WalkRule,
    x_t: Vec<(NodeId, f64)>,
    // edge mass after each of the h moves
    steps: Vec<Vec<f64>>,
}

impl Vjp for MarginalVjp<'_> {
    fn vjp(&self, input: &Matrix, _output: &Matrix, grad_output: &Matrix) -> Matrix {
        let g = self.graph;
        let w = input.data();
        let gout = grad_output.data();
        let mut grad = vec![0.0; w.len()];
        let h = self.steps.len();
        let mut upstream: Vec<f64> = (0..g.edge_count()).map(|e| gout[g.target(e)]).collect();
        for k in (0..h - 1).rev() {
            let mass = &self.steps[k];
            let mut down = vec![0.0; g.edge_count()];
            for (e, &me) in mass.iter().enumerate() {
                let mut acc = 0.0;
                for &f in g.out_edges(g.target(e)) {
                    let uf = upstream[f];
                    if uf == 0.0 {
                        continue;
                    }
                    acc += transition(g, w, self.rule, e, f) * uf;
                    if me != 0.0 {
                        transition_grad(g, w, self.rule, e, f, me * uf, &mut grad);
                    }
                }
                down[e] = acc;
            }
            upstream = down;
        }
        for &(v, xv) in &self.x_t {
            for &e in g.out_edges(v) {
                grad[e] += xv * upstream[e];
            }
        }
        Matrix::column(grad)
    }
}

/// Differentiable exact-mode [`target_marginal`]; returns an `n x 1` value.
pub fn target_marginal_var<'g>(
    tape: &mut Tape<'g>,
    weights: Var,
    graph: &'g Graph,
    rule: WalkRule,
    x_t: &NodeDistribution,
    h: usize,
) -> Result<Var, WalkError> {
    if h < 1 {
        return Err(WalkError::InvalidHorizon(h));
    }
    check_weight_var(tape, weights, graph)?;
    x_t.check_nodes(graph)?;
    let w = tape.value(weights).data();
    let mut steps = vec![first_step_dense(graph, w, x_t)];
    for _ in 1..h {
        let next = propagate(graph, w, rule, steps.last().expect("non-empty"));
        steps.push(next);
    }
    let out = aggregate_destinations(graph, steps.last().expect("non-empty"));
    let vjp = MarginalVjp { graph, rule, x_t: x_t.entries().to_vec(), steps };
    Ok(tape.custom(weights, Matrix::column(out), Box::new(vjp)))
}

#[derive(Debug)]
struct Frontier {
    loglik: f64,
    edges: Vec<EdgeId>,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Higher likelihood first; among equals the lexicographically smaller
    // edge sequence comes out of the max-heap first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.loglik.total_cmp(&other.loglik).then_with(|| other.edges.cmp(&self.edges))
    }
}

/// Most likely length-`h` suffix from `v_t` by best-first search on edge
/// states. Each move adds a nonpositive log-probability, so the first
/// complete path popped is optimal; ties resolve to the smallest edge-id
/// sequence. The log-likelihood is accumulated left to right starting from
/// `ln w(first edge)`.
pub fn most_likely_suffix(lat: &LatentGraph<'_>, v_t: NodeId, h: usize) -> Result<(PathSample, f64), WalkError> {
    if h < 1 {
        return Err(WalkError::InvalidHorizon(h));
    }
    let g = lat.graph;
    g.check_node(v_t)?;
    let mut heap = BinaryHeap::new();
    for &e in g.out_edges(v_t) {
        let p = lat.weights[e];
        if p > 0.0 {
            heap.push(Frontier { loglik: p.ln(), edges: vec![e] });
        }
    }
    while let Some(Frontier { loglik, edges }) = heap.pop() {
        if edges.len() == h {
            let nodes = edges.iter().map(|&e| g.target(e)).collect();
            return Ok((PathSample::unchecked(nodes), loglik));
        }
        let last = *edges.last().expect("non-empty");
        for &f in g.out_edges(g.target(last)) {
            let p = transition(g, &lat.weights, lat.rule, last, f);
            if p > 0.0 {
                let mut next = edges.clone();
                next.push(f);
                heap.push(Frontier { loglik: loglik + p.ln(), edges: next });
            }
        }
    }
    Err(WalkError::NoPath { node: v_t, h })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleOutcome {
    /// Start node drawn from `x_t` and the `h` nodes that follow it.
    Path { start: NodeId, suffix: PathSample },
    /// The walk reached a state without legal continuation after `steps` moves.
    DeadEnd { start: NodeId, steps: usize },
}

fn pick<R: Rng>(rng: &mut R, items: impl Iterator<Item = (usize, f64)> + Clone) -> Option<usize> {
    let total: f64 = items.clone().map(|x| x.1).sum();
    if total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (item, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(item);
        if target < acc {
            return Some(item);
        }
    }
    last
}

/// Draws one suffix of length `h`.
pub fn sample_suffix<R: Rng>(
    lat: &LatentGraph<'_>,
    x_t: &NodeDistribution,
    h: usize,
    rng: &mut R,
) -> Result<SampleOutcome, WalkError> {
    if h < 1 {
        return Err(WalkError::InvalidHorizon(h));
    }
    let g = lat.graph;
    x_t.check_nodes(g)?;
    let start = pick(rng, x_t.entries().iter().copied()).expect("distribution has mass");
    let w = &lat.weights;
    let Some(mut edge) = pick(rng, g.out_edges(start).iter().map(|&e| (e, w[e]))) else {
        return Ok(SampleOutcome::DeadEnd { start, steps: 0 });
    };
    let mut nodes = vec![g.target(edge)];
    while nodes.len() < h {
        let prev = edge;
        let candidates = g.out_edges(g.target(prev)).iter().map(|&f| (f, transition(g, w, lat.rule, prev, f)));
        match pick(rng, candidates) {
            Some(f) => {
                edge = f;
                nodes.push(g.target(f));
            }
            None => return Ok(SampleOutcome::DeadEnd { start, steps: nodes.len() }),
        }
    }
    Ok(SampleOutcome::Path { start, suffix: PathSample::unchecked(nodes) })
}

/// [`sample_suffix`] with a fresh generator seeded from `seed`.
pub fn sample_suffix_seeded(
    lat: &LatentGraph<'_>,
    x_t: &NodeDistribution,
    h: usize,
    seed: u64,
) -> Result<SampleOutcome, WalkError> {
    sample_suffix(lat, x_t, h, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        // edges: 0:A->B 1:B->A 2:B->C 3:C->B 4:C->A 5:A->C
        Graph::bidirected(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    fn cycle() -> Graph {
        Graph::from_edges(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn step_prob_cases() {
        let g = Graph::bidirected(3, &[(0, 1), (1, 2)]).unwrap();
        // node 1 has out-edges 1 (1->0) and 2 (1->2)
        let w = vec![1.0, 0.4, 0.6, 1.0];
        let lat = LatentGraph::new(&g, w, WalkRule::NonBacktracking).unwrap();
        assert_eq!(step_prob(&lat, None, 2).unwrap(), 0.6);
        // prev 0->1, next 1->2: 0.6 / (1 - w(1->0) = 0.6) = 1
        assert!((step_prob(&lat, Some(0), 2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(step_prob(&lat, Some(0), 1).unwrap(), 0.0);
        assert!(matches!(step_prob(&lat, Some(0), 3), Err(WalkError::NotConsecutive { .. })));
    }

    #[test]
    fn step_prob_formula_arithmetic() {
        // star: centre 0 with leaves 1, 2, 3 (bidirected)
        let g = Graph::bidirected(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        // out of 0: edges 0 (->1), 2 (->2), 4 (->3)
        let mut w = vec![0.0; 6];
        w[0] = 0.4;
        w[2] = 0.3;
        w[4] = 0.3;
        for e in [1, 3, 5] {
            w[e] = 1.0;
        }
        let lat = LatentGraph::new(&g, w, WalkRule::NonBacktracking).unwrap();
        // arrive from 1 (edge 1: 1->0), back edge weight 0.4, go to 2 with 0.3
        assert!((step_prob(&lat, Some(1), 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn suffix_likelihood_on_triangle() {
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let a = NodeDistribution::dirac(0);
        assert!((suffix_likelihood(&lat, &a, &[1, 2]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(suffix_likelihood(&lat, &a, &[1, 0]).unwrap(), 0.0);
        let mixed = NodeDistribution::new(vec![(0, 0.6), (2, 0.4)]).unwrap();
        assert!((suffix_likelihood(&lat, &mixed, &[1, 2]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(suffix_likelihood(&lat, &a, &[]), Err(WalkError::EmptySuffix));
    }

    #[test]
    fn transition_matrix_cases() {
        let g = triangle();
        let t = build_nb_transition(&LatentGraph::uniform(&g, WalkRule::NonBacktracking));
        for e in 0..6 {
            assert_eq!(t.row(e).len(), 1);
            assert!((t.row_sum(e) - 1.0).abs() < 1e-15);
        }
        let c = cycle();
        let lat = LatentGraph::uniform(&c, WalkRule::NonBacktracking);
        let t = build_nb_transition(&lat);
        assert_eq!(t.row(0), &[(1, 1.0)]);
        let sink = Graph::from_edges(2, vec![(0, 1)]).unwrap();
        let t = build_nb_transition(&LatentGraph::uniform(&sink, WalkRule::NonBacktracking));
        assert!(t.row(0).is_empty());
    }

    #[test]
    fn first_step_cases() {
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let d = first_step(&lat, &NodeDistribution::dirac(0)).unwrap();
        assert_eq!(d.iter().collect::<Vec<_>>(), vec![(0, 0.5), (5, 0.5)]);
        let sink = Graph::from_edges(2, vec![(0, 1)]).unwrap();
        let lat = LatentGraph::uniform(&sink, WalkRule::NonBacktracking);
        assert!(first_step(&lat, &NodeDistribution::dirac(1)).unwrap().is_empty());
    }

    #[test]
    fn marginal_cases() {
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let a = NodeDistribution::dirac(0);
        for h in [1, 2] {
            let m = target_marginal(&lat, &a, h, MarginalMode::Exact).unwrap();
            assert_eq!(m, vec![0.0, 0.5, 0.5]);
        }
        let c = cycle();
        let lat = LatentGraph::uniform(&c, WalkRule::NonBacktracking);
        assert_eq!(target_marginal(&lat, &a, 3, MarginalMode::Exact).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(target_marginal(&lat, &a, 0, MarginalMode::Exact), Err(WalkError::InvalidHorizon(0)));
        // source projection aggregates onto the sources of the edges reached after h
        // continuations: on the cycle the mass sits on edge 1->2 after h = 1
        let p = target_marginal(&lat, &a, 1, MarginalMode::SourceProjection).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn best_suffix_cases() {
        let chain = Graph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let lat = LatentGraph::uniform(&chain, WalkRule::NonBacktracking);
        let (s, ll) = most_likely_suffix(&lat, 0, 2).unwrap();
        assert_eq!(s.nodes(), &[1, 2]);
        assert_eq!(ll, 0.0);

        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let (s, ll) = most_likely_suffix(&lat, 0, 2).unwrap();
        // both A->B->C (edges 0, 2) and A->C->B (edges 5, 3) have 0.5
        assert_eq!(s.nodes(), &[1, 2]);
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);

        let pair = Graph::bidirected(2, &[(0, 1)]).unwrap();
        let lat = LatentGraph::uniform(&pair, WalkRule::NonBacktracking);
        assert_eq!(most_likely_suffix(&lat, 0, 2), Err(WalkError::NoPath { node: 0, h: 2 }));
    }

    #[test]
    fn sampling_cases() {
        let chain = Graph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let lat = LatentGraph::uniform(&chain, WalkRule::NonBacktracking);
        let a = NodeDistribution::dirac(0);
        for seed in 0..5 {
            let s = sample_suffix_seeded(&lat, &a, 2, seed).unwrap();
            assert_eq!(s, SampleOutcome::Path { start: 0, suffix: PathSample::unchecked(vec![1, 2]) });
        }
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        assert_eq!(sample_suffix_seeded(&lat, &a, 3, 7).unwrap(), sample_suffix_seeded(&lat, &a, 3, 7).unwrap());
        let pair = Graph::bidirected(2, &[(0, 1)]).unwrap();
        let lat = LatentGraph::uniform(&pair, WalkRule::NonBacktracking);
        assert_eq!(sample_suffix_seeded(&lat, &a, 3, 1).unwrap(), SampleOutcome::DeadEnd { start: 0, steps: 1 });
    }

    #[test]
    fn frequency_matches_likelihood() {
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let a = NodeDistribution::dirac(0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                matches!(sample_suffix(&lat, &a, 1, &mut rng).unwrap(),
                    SampleOutcome::Path { suffix, .. } if suffix.nodes() == [1])
            })
            .count();
        let freq = hits as f64 / n as f64;
        let p = suffix_likelihood(&lat, &a, &[1]).unwrap();
        assert!((freq - p).abs() < 0.01, "{freq}");
    }

    #[test]
    fn backtracking_rule_allows_reversal() {
        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::Backtracking);
        let a = NodeDistribution::dirac(0);
        assert!((suffix_likelihood(&lat, &a, &[1, 0]).unwrap() - 0.25).abs() < 1e-15);
        let m = target_marginal(&lat, &a, 2, MarginalMode::Exact).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15);
    }
}
