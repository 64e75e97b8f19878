//! Brute-force reference for walk probabilities, written against the edge
//! list only so it shares no code with the library's walk engine.

#![allow(dead_code)]

use pathwalk::encoder::{EncoderConfig, EncoderKind, SoftmaxKind};
use pathwalk::graph::{degree_features, FeatureTable, Graph, NodeDistribution, PathSample, Trajectory};
use pathwalk::nbwalk::WalkRule;
use pathwalk::neural::ParamId;
use pathwalk::training::{sample_loss, LossKind, Model, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const DEAD_END: f64 = 1e-12;

/// Random simple digraph with `n` nodes and at most `max_edges` edges.
/// Half the instances add every reverse edge, the rest keep one-way edges.
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, max_edges: usize) -> Graph {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let symmetric = rng.random::<bool>();
    let tries = rng.random_range(n..=3 * max_edges);
    for _ in 0..tries {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || pairs.contains(&(a, b)) {
            continue;
        }
        let needed = if symmetric && !pairs.contains(&(b, a)) { 2 } else { 1 };
        if pairs.len() + needed > max_edges {
            continue;
        }
        pairs.push((a, b));
        if symmetric && !pairs.contains(&(b, a)) {
            pairs.push((b, a));
        }
    }
    Graph::from_edges(n, pairs).expect("simple digraph")
}

/// Softmax of random scores over each node's out-edges; with `uniform`
/// every score is equal, which produces many exact ties.
pub fn random_weights(rng: &mut ChaCha8Rng, g: &Graph, uniform: bool) -> Vec<f64> {
    let scores: Vec<f64> = (0..g.edge_count()).map(|_| if uniform { 0.0 } else { rng.random_range(-3.0..3.0) }).collect();
    let mut w = vec![0.0; g.edge_count()];
    for v in 0..g.node_count() {
        let out: Vec<usize> = (0..g.edge_count()).filter(|&e| g.edges()[e].0 == v).collect();
        let max = out.iter().map(|&e| scores[e]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = out.iter().map(|&e| (scores[e] - max).exp()).sum();
        for &e in &out {
            w[e] = (scores[e] - max).exp() / z;
        }
    }
    w
}

pub struct Oracle<'a> {
    pub edges: &'a [(usize, usize)],
    pub w: &'a [f64],
    pub non_backtracking: bool,
}

/// One enumerated walk: its edges, the visited nodes after the start, the
/// probability (product) and the log-likelihood summed left to right.
#[derive(Clone, Debug)]
pub struct Walk {
    pub edges: Vec<usize>,
    pub nodes: Vec<usize>,
    pub prob: f64,
    pub loglik: f64,
}

impl Oracle<'_> {
    fn reverse(&self, e: usize) -> Option<usize> {
        let (a, b) = self.edges[e];
        self.edges.iter().position(|&(s, d)| s == b && d == a)
    }

    pub fn out(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].0 == v).collect()
    }

    /// Probability of taking `next` right after `prev`.
    pub fn step(&self, prev: usize, next: usize) -> f64 {
        if !self.non_backtracking {
            return self.w[next];
        }
        let back = self.reverse(prev);
        if back == Some(next) {
            return 0.0;
        }
        let denom = match back {
            Some(b) => 1.0 - self.w[b],
            None => 1.0,
        };
        if denom < DEAD_END {
            0.0
        } else {
            self.w[next] / denom
        }
    }

    /// Every length-`h` edge walk from `v` (zero-probability moves included),
    /// plus whether some positive-probability prefix got stuck before `h`.
    pub fn enumerate(&self, v: usize, h: usize) -> (Vec<Walk>, bool) {
        let mut done = Vec::new();
        let mut stuck = false;
        let mut stack: Vec<Walk> = self
            .out(v)
            .into_iter()
            .map(|e| Walk { edges: vec![e], nodes: vec![self.edges[e].1], prob: self.w[e], loglik: self.w[e].ln() })
            .collect();
        if stack.is_empty() {
            stuck = true;
        }
        while let Some(walk) = stack.pop() {
            if walk.edges.len() == h {
                done.push(walk);
                continue;
            }
            let last = *walk.edges.last().unwrap();
            let here = self.edges[last].1;
            let mut any = false;
            for f in self.out(here) {
                let p = self.step(last, f);
                any |= p > 0.0;
                let mut next = walk.clone();
                next.edges.push(f);
                next.nodes.push(self.edges[f].1);
                next.prob *= p;
                next.loglik += p.ln();
                stack.push(next);
            }
            if !any && walk.prob > 0.0 {
                stuck = true;
            }
        }
        (done, stuck)
    }

    /// Node marginal after `h` moves from the distribution `x`.
    pub fn marginal(&self, n: usize, x: &[(usize, f64)], h: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(v, m) in x {
            for walk in self.enumerate(v, h).0 {
                out[*walk.nodes.last().unwrap()] += m * walk.prob;
            }
        }
        out
    }

    /// Most likely walk: highest log-likelihood, ties to the smallest edge
    /// sequence.
    pub fn best(&self, v: usize, h: usize) -> Option<Walk> {
        self.enumerate(v, h)
            .0
            .into_iter()
            .filter(|w| w.prob > 0.0)
            .max_by(|a, b| a.loglik.total_cmp(&b.loglik).then_with(|| b.edges.cmp(&a.edges)))
    }
}

/// Largest relative difference of two slices, against `max(|a|, |b|, floor)`.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Connected bidirected graph: a random spanning tree plus extra pairs.
pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Graph {
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    Graph::bidirected(n, &pairs).expect("simple graph")
}

/// Random distribution over 1 to 3 distinct nodes.
pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> NodeDistribution {
    let k = rng.random_range(1..=3.min(n));
    let mut nodes: Vec<usize> = Vec::new();
    while nodes.len() < k {
        let v = rng.random_range(0..n);
        if !nodes.contains(&v) {
            nodes.push(v);
        }
    }
    NodeDistribution::normalized(nodes.into_iter().map(|v| (v, rng.random_range(0.1..1.0))).collect()).unwrap()
}

/// Uniformly random non-backtracking walk of `h` moves from `v`, if one exists.
pub fn random_nb_walk(rng: &mut ChaCha8Rng, g: &Graph, v: usize, h: usize) -> Option<Vec<usize>> {
    let mut nodes = Vec::with_capacity(h);
    let mut prev: Option<usize> = None;
    let mut here = v;
    for _ in 0..h {
        let options: Vec<usize> = g.out_edges(here).iter().copied().filter(|&e| prev.is_none_or(|p| g.reverse_edge(p) != Some(e))).collect();
        if options.is_empty() {
            return None;
        }
        let e = options[rng.random_range(0..options.len())];
        here = g.target(e);
        nodes.push(here);
        prev = Some(e);
    }
    Some(nodes)
}

/// A random graph with node and edge features, a randomly configured
/// model with randomised parameters and a labelled sample.
pub struct GradientInstance {
    pub graph: Graph,
    pub model: Model,
    pub sample: TrainSample,
}

pub fn gradient_instance(seed: u64) -> GradientInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=12);
    let g = random_connected(&mut rng, n, n);
    let degrees = degree_features(&g);
    let extra: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nodes = degrees.with_column("noise", &extra);
    let edge_cols = rng.random_range(0..=2);
    let mut edges = FeatureTable::empty(g.edge_count());
    for c in 0..edge_cols {
        let col: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        edges = edges.with_column(&format!("e{c}"), &col);
    }
    let g = g.with_node_features(nodes).unwrap().with_edge_features(edges).unwrap();

    let config = EncoderConfig {
        gcn_layers: rng.random_range(1..=3),
        gcn_dim: rng.random_range(2..=4),
        mlp_hidden: if rng.random::<bool>() { vec![6] } else { vec![5, 4] },
        num_observations: rng.random_range(1..=3),
        encoder_kind: if seed.is_multiple_of(2) { EncoderKind::LearnedGcn } else { EncoderKind::NonparametricDiffusion },
        diffusion_steps: rng.random_range(1..=3),
        softmax_kind: if seed % 4 < 2 { SoftmaxKind::TrueSoftmax } else { SoftmaxKind::Ratio },
    };
    let config_kind = config.softmax_kind;
    let mut model = Model::init(&g, config, seed).unwrap();
    // Random weights with positive biases so most ReLUs are active; in
    // ratio mode the output bias keeps scores above the clamp.
    let normal = Normal::new(0.0, 0.6).unwrap();
    for x in model.params.values_mut() {
        *x = normal.sample(&mut rng);
    }
    let mut layers: Vec<(ParamId, ParamId)> = model.encoder.score_mlp().layers().to_vec();
    layers.extend(model.encoder.init_mlp().map(|m| m.layers().to_vec()).unwrap_or_default());
    for &(_, bias) in &layers {
        for b in model.params.slice_mut(bias) {
            *b = rng.random_range(0.05..0.5);
        }
    }
    if config_kind == SoftmaxKind::Ratio {
        let &(_, out_bias) = model.encoder.score_mlp().layers().last().unwrap();
        model.params.slice_mut(out_bias)[0] += 3.0;
    }

    loop {
        let k = rng.random_range(1..=4);
        let observations: Vec<NodeDistribution> = (0..k).map(|_| random_distribution(&mut rng, n)).collect();
        let traj = Trajectory::new(observations, (0..k as i64).collect()).unwrap();
        let h = rng.random_range(1..=3);
        let support: Vec<usize> = traj.last().support().collect();
        let start = support[rng.random_range(0..support.len())];
        let Some(suffix) = random_nb_walk(&mut rng, &g, start, h) else { continue };
        let target = NodeDistribution::dirac(*suffix.last().unwrap());
        let suffix = PathSample::new(&g, suffix).unwrap();
        let sample = TrainSample::new(traj, Some(suffix), Some(target), h).unwrap();
        return GradientInstance { graph: g, model, sample };
    }
}

/// Central difference of `f` at 0 with step `h`, or `None` when the halved
/// step disagrees by more than 1e-6 relative: the stencil straddles a ReLU
/// kink or the step is too coarse for the local curvature.
pub fn smooth_central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> Option<f64> {
    let wide = (f(h) - f(-h)) / (2.0 * h);
    let narrow = (f(h / 2.0) - f(-h / 2.0)) / h;
    ((wide - narrow).abs() <= 1e-6 * wide.abs().max(1e-3)).then_some(wide)
}

/// Largest relative error, with denominator `max(|a|, |b|, 1e-8)`, between
/// the tape gradient of `kind` and a numerical derivative of the loss
/// recomputed from scratch, over `probes` random coordinates. Each probe
/// tries a coarse step first (small roundoff on components that cancel to
/// zero) and a finer one second; probes where neither converges are redrawn.
pub fn gradient_error(inst: &mut GradientInstance, kind: LossKind, probes: usize, seed: u64) -> GradientReport {
    const STEPS: [f64; 2] = [1e-2, 1e-3];
    let g = &inst.graph;
    inst.model.params.zero_grad();
    inst.model.accumulate_batch(g, &[&inst.sample], kind).unwrap();
    let analytic = inst.model.params.grad().to_vec();
    let len = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = &inst.sample;
    let model = &mut inst.model;
    let mut report = GradientReport { worst: 0.0, checked: 0, kinked: 0 };
    while report.checked < probes.min(len) && report.kinked < 10 * probes {
        let i = rng.random_range(0..len);
        let orig = model.params.values()[i];
        let numeric = STEPS.iter().find_map(|&h| {
            smooth_central_diff(
                |d| {
                    model.params.values_mut()[i] = orig + d;
                    let lat = model.latent(g, sample.trajectory(), WalkRule::NonBacktracking).unwrap();
                    sample_loss(&lat, sample, kind).unwrap()
                },
                h,
            )
        });
        model.params.values_mut()[i] = orig;
        let Some(numeric) = numeric else {
            report.kinked += 1;
            continue;
        };
        report.checked += 1;
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        report.worst = report.worst.max(err);
    }
    report
}

pub struct GradientReport {
    pub worst: f64,
    pub checked: usize,
    pub kinked: usize,
}
