//! Trajectory encoder producing the latent graph.
//!
//! Per observation, node pseudo-coordinates come from a k-layer GCN on the
//! observation's mass (or from parameter-free diffusion). A scoring MLP then
//! rates every edge from the coordinates and features of both endpoints and
//! the edge's own features, and a softmax over each node's outgoing edges
//! turns the scores into transition weights.

use rand::Rng;

use crate::graph::{EdgeId, Graph, NodeId, Trajectory};
use crate::nbwalk::{LatentGraph, WalkError, WalkRule};
use crate::neural::{Init, Matrix, Mlp, NeuralError, ParamId, ParamStore, Tape, Var};

/// Floor applied to scores in [`SoftmaxKind::Ratio`] mode.
pub const RATIO_FLOOR: f64 = 1e-12;
/// Weight of the implicit self-loop in GCN aggregation.
pub const GCN_SELF_WEIGHT: f64 = 1.0;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EncodeError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("feature dimensions differ from the model: {0}")]
    Features(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Walk(#[from] WalkError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    LearnedGcn,
    NonparametricDiffusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxKind {
    TrueSoftmax,
    Ratio,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}
pub(crate) use keyword_enum;

keyword_enum!(EncoderKind { "learned_gcn" => EncoderKind::LearnedGcn, "nonparametric_diffusion" => EncoderKind::NonparametricDiffusion });
keyword_enum!(SoftmaxKind { "true_softmax" => SoftmaxKind::TrueSoftmax, "ratio" => SoftmaxKind::Ratio });

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub gcn_layers: usize,
    pub gcn_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub num_observations: usize,
    pub encoder_kind: EncoderKind,
    pub diffusion_steps: usize,
    pub softmax_kind: SoftmaxKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            gcn_layers: 3,
            gcn_dim: 8,
            mlp_hidden: vec![32, 32],
            num_observations: 5,
            encoder_kind: EncoderKind::LearnedGcn,
            diffusion_steps: 3,
            softmax_kind: SoftmaxKind::TrueSoftmax,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        let positive = [
            ("gcn_layers", self.gcn_layers),
            ("gcn_dim", self.gcn_dim),
            ("num_observations", self.num_observations),
            ("diffusion_steps", self.diffusion_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return Err(EncodeError::Config(format!("{name} must be positive")));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(EncodeError::Config("mlp_hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Coordinate width contributed by one observation.
    pub fn coordinate_width(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::LearnedGcn => self.gcn_dim,
            EncoderKind::NonparametricDiffusion => self.diffusion_steps,
        }
    }
}

/// Which edges get scored by the network. Edges outside the scope keep a
/// uniform weight and receive no gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum EdgeScope {
    All,
    /// Sorted edge ids; must be closed under "same source node".
    Edges(Vec<EdgeId>),
}

impl EdgeScope {
    /// Out-edges of every node within `hops` forward hops of `sources`. A
    /// walk from `sources` lasting `hops + 1` moves only reads weights in
    /// this scope.
    pub fn around(g: &Graph, sources: impl IntoIterator<Item = NodeId>, hops: usize) -> Self {
        let mut dist = vec![usize::MAX; g.node_count()];
        let mut frontier: Vec<NodeId> = Vec::new();
        for v in sources {
            if dist[v] != 0 {
                dist[v] = 0;
                frontier.push(v);
            }
        }
        for d in 1..=hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for &e in g.out_edges(v) {
                    let u = g.target(e);
                    if dist[u] == usize::MAX {
                        dist[u] = d;
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        let edges = (0..g.edge_count()).filter(|&e| dist[g.source(e)] != usize::MAX).collect();
        EdgeScope::Edges(edges)
    }
}

/// Values shared by every trajectory encoded on the same tape.
pub struct Prepared {
    init_weights: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    node_dim: usize,
    edge_dim: usize,
    init_mlp: Option<Mlp>,
    gcn: Vec<ParamId>,
    score_mlp: Mlp,
}

impl Encoder {
    /// Registers all parameters in `store`. The scoring MLP's output layer
    /// starts at zero, so a fresh encoder yields uniform out-edge weights.
    pub fn new<R: Rng>(
        config: EncoderConfig,
        node_dim: usize,
        edge_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, EncodeError> {
        config.validate()?;
        let feature_dim = 2 * node_dim + edge_dim;
        let (init_mlp, gcn) = match config.encoder_kind {
            EncoderKind::LearnedGcn => {
                let init = Mlp::new(store, "init_mlp", feature_dim, &config.mlp_hidden, 1, false, rng);
                let gcn = (0..config.gcn_layers)
                    .map(|k| {
                        let rows = if k == 0 { 1 } else { config.gcn_dim };
                        store.add(&format!("gcn.{k}.weight"), rows, config.gcn_dim, Init::Glorot, rng)
                    })
                    .collect();
                (Some(init), gcn)
            }
            EncoderKind::NonparametricDiffusion => (None, Vec::new()),
        };
        let coord_dim = config.num_observations * config.coordinate_width();
        let score_mlp = Mlp::new(store, "score_mlp", 2 * coord_dim + feature_dim, &config.mlp_hidden, 1, true, rng);
        Ok(Self { config, node_dim, edge_dim, init_mlp, gcn, score_mlp })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn score_mlp(&self) -> &Mlp {
        &self.score_mlp
    }

    pub fn init_mlp(&self) -> Option<&Mlp> {
        self.init_mlp.as_ref()
    }

    pub fn gcn_weights(&self) -> &[ParamId] {
        &self.gcn
    }

    fn check_features(&self, g: &Graph) -> Result<(), EncodeError> {
        let (dv, de) = (g.node_features().dim(), g.edge_features().dim());
        if dv != self.node_dim || de != self.edge_dim {
            return Err(EncodeError::Features(format!(
                "graph has {dv} node / {de} edge features, model expects {} / {}",
                self.node_dim, self.edge_dim
            )));
        }
        Ok(())
    }

    /// `f_src ⊕ f_dst ⊕ f_edge` for each listed edge.
    fn edge_feature_rows(g: &Graph, edges: &[EdgeId]) -> Matrix {
        let (nf, ef) = (g.node_features(), g.edge_features());
        let width = 2 * nf.dim() + ef.dim();
        let mut data = Vec::with_capacity(edges.len() * width);
        for &e in edges {
            let (s, d) = g.edge(e);
            data.extend_from_slice(nf.row(s));
            data.extend_from_slice(nf.row(d));
            data.extend_from_slice(ef.row(e));
        }
        Matrix::new(edges.len(), width, data)
    }

    /// GCN aggregation weights: `sigmoid(MLP(f_i ⊕ f_j ⊕ f_ij))`, one per edge.
    pub fn initial_edge_weights<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        g: &'g Graph,
    ) -> Result<Var, EncodeError> {
        self.check_features(g)?;
        let mlp = self
            .init_mlp
            .as_ref()
            .ok_or_else(|| EncodeError::Config("diffusion encoder has no initial edge weights".into()))?;
        let all: Vec<EdgeId> = (0..g.edge_count()).collect();
        let x = tape.constant(Self::edge_feature_rows(g, &all));
        let z = mlp.forward(tape, store, x)?;
        Ok(tape.sigmoid(z))
    }

    /// Concatenation over observations of the last GCN layer, `n x (|I| d_c)`.
    pub fn gcn_pseudo_coordinates<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        g: &'g Graph,
        traj: &Trajectory,
        init_weights: Var,
    ) -> Result<Var, EncodeError> {
        if traj.len() != self.config.num_observations {
            return Err(EncodeError::Config(format!(
                "trajectory has {} observations, model expects {}",
                traj.len(),
                self.config.num_observations
            )));
        }
        let mut per_obs = Vec::with_capacity(traj.len());
        for obs in traj.observations() {
            let mut x = tape.constant(Matrix::column(obs.to_dense(g.node_count())));
            for &wk in &self.gcn {
                let agg = tape.aggregate(x, init_weights, g.edges(), GCN_SELF_WEIGHT)?;
                let wv = tape.param(store, wk);
                let z = tape.matmul(agg, wv)?;
                x = tape.relu(z);
            }
            per_obs.push(x);
        }
        Ok(tape.concat_cols(&per_obs)?)
    }

    /// Per-tape setup shared across trajectories.
    pub fn prepare<'g>(&self, tape: &mut Tape<'g>, store: &ParamStore, g: &'g Graph) -> Result<Prepared, EncodeError> {
        self.check_features(g)?;
        let init_weights = match self.config.encoder_kind {
            EncoderKind::LearnedGcn => Some(self.initial_edge_weights(tape, store, g)?),
            EncoderKind::NonparametricDiffusion => None,
        };
        Ok(Prepared { init_weights })
    }

    /// Latent edge weights (`m x 1`) for `traj`, which is first truncated or
    /// padded to the configured observation count.
    pub fn encode_prepared<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        g: &'g Graph,
        prepared: &Prepared,
        traj: &Trajectory,
        scope: &EdgeScope,
    ) -> Result<Var, EncodeError> {
        traj.check_nodes(g).map_err(WalkError::from)?;
        let traj = traj.fit_to(self.config.num_observations);
        let coords = match prepared.init_weights {
            Some(w) => self.gcn_pseudo_coordinates(tape, store, g, &traj, w)?,
            None => tape.constant(diffusion_pseudo_coordinates(g, &traj, self.config.diffusion_steps)),
        };
        let all_edges;
        let edges: &[EdgeId] = match scope {
            EdgeScope::All => {
                all_edges = (0..g.edge_count()).collect::<Vec<_>>();
                &all_edges
            }
            EdgeScope::Edges(e) => e,
        };
        let src_rows = tape.gather_rows(coords, edges.iter().map(|&e| g.source(e)).collect())?;
        let dst_rows = tape.gather_rows(coords, edges.iter().map(|&e| g.target(e)).collect())?;
        let feats = tape.constant(Self::edge_feature_rows(g, edges));
        let input = tape.concat_cols(&[src_rows, dst_rows, feats])?;
        let scores = self.score_mlp.forward(tape, store, input)?;

        let mut position = vec![usize::MAX; g.edge_count()];
        for (i, &e) in edges.iter().enumerate() {
            position[e] = i;
        }
        let mut groups = Vec::new();
        let mut last_source = None;
        for &e in edges {
            let s = g.source(e);
            if last_source == Some(s) {
                continue;
            }
            last_source = Some(s);
            let group: Vec<usize> = g.out_edges(s).iter().map(|&f| position[f]).collect();
            if group.contains(&usize::MAX) {
                return Err(EncodeError::Config(format!("edge scope splits the out-edges of node {s}")));
            }
            groups.push(group);
        }
        groups.sort();
        groups.dedup();
        let weights = match self.config.softmax_kind {
            SoftmaxKind::TrueSoftmax => tape.grouped_softmax(scores, groups)?,
            SoftmaxKind::Ratio => tape.grouped_ratio(scores, groups, RATIO_FLOOR)?,
        };
        match scope {
            EdgeScope::All => Ok(weights),
            EdgeScope::Edges(_) => {
                let base = LatentGraph::uniform(g, WalkRule::NonBacktracking).weights().to_vec();
                Ok(tape.scatter_rows(Matrix::column(base), weights, edges.to_vec())?)
            }
        }
    }

    pub fn encode<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        g: &'g Graph,
        traj: &Trajectory,
        scope: &EdgeScope,
    ) -> Result<Var, EncodeError> {
        let prepared = self.prepare(tape, store, g)?;
        self.encode_prepared(tape, store, g, &prepared, traj, scope)
    }

    /// Forward-only encoding into a validated [`LatentGraph`].
    pub fn latent<'g>(
        &self,
        store: &ParamStore,
        g: &'g Graph,
        traj: &Trajectory,
        rule: WalkRule,
    ) -> Result<LatentGraph<'g>, EncodeError> {
        let mut tape = Tape::new();
        let w = self.encode(&mut tape, store, g, traj, &EdgeScope::All)?;
        let weights = tape.value(w).data().to_vec();
        Ok(LatentGraph::new(g, weights, rule)?)
    }
}

/// Parameter-free coordinates: for each observation and `s = 1..=steps`,
/// the mass `[D^s x]_i`, where `D` spreads each node's mass uniformly over
/// its out-neighbours and itself.
pub fn diffusion_pseudo_coordinates(g: &Graph, traj: &Trajectory, steps: usize) -> Matrix {
    let n = g.node_count();
    let width = traj.len() * steps;
    let mut out = Matrix::zeros(n, width);
    for (tau, obs) in traj.observations().iter().enumerate() {
        let mut x = obs.to_dense(n);
        for s in 0..steps {
            let mut next = vec![0.0; n];
            for (v, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let share = xv / (g.out_degree(v) + 1) as f64;
                next[v] += share;
                for &e in g.out_edges(v) {
                    next[g.target(e)] += share;
                }
            }
            for (v, &val) in next.iter().enumerate() {
                out.row_mut(v)[tau * steps + s] = val;
            }
            x = next;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{degree_features, FeatureTable, NodeDistribution};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Graph {
        let g = Graph::bidirected(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        g.with_node_features(degree_features(&g)).unwrap()
    }

    fn config(kind: EncoderKind, obs: usize) -> EncoderConfig {
        EncoderConfig {
            gcn_layers: 2,
            gcn_dim: 3,
            mlp_hidden: vec![4],
            num_observations: obs,
            encoder_kind: kind,
            diffusion_steps: 2,
            softmax_kind: SoftmaxKind::TrueSoftmax,
        }
    }

    fn build(g: &Graph, cfg: EncoderConfig) -> (Encoder, ParamStore) {
        let mut store = ParamStore::new();
        let enc = Encoder::new(cfg, g.node_features().dim(), g.edge_features().dim(), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (enc, store)
    }

    #[test]
    fn zero_init_mlp_gives_half() {
        let g = triangle();
        let (enc, mut store) = build(&g, config(EncoderKind::LearnedGcn, 1));
        store.values_mut().iter_mut().for_each(|x| *x = 0.0);
        let mut t = Tape::new();
        let w = enc.initial_edge_weights(&mut t, &store, &g).unwrap();
        assert!(t.value(w).data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn identical_features_identical_init_weights() {
        let g = triangle();
        let (enc, store) = build(&g, config(EncoderKind::LearnedGcn, 1));
        let mut t = Tape::new();
        let w = enc.initial_edge_weights(&mut t, &store, &g).unwrap();
        let v = t.value(w).data();
        assert!(v.iter().all(|&x| x == v[0] && x > 0.0 && x < 1.0));
    }

    #[test]
    fn hand_set_init_mlp() {
        // features: node (in, out) degree and one edge feature
        let g = Graph::from_edges(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        let g = g.with_node_features(degree_features(&g)).unwrap();
        let g = g.with_edge_features(FeatureTable::new(vec!["c".into()], 3, vec![1.0, -1.0, 0.5])).unwrap();
        let mut cfg = config(EncoderKind::LearnedGcn, 1);
        cfg.mlp_hidden = vec![];
        let (enc, mut store) = build(&g, cfg);
        let (w, b) = enc.init_mlp().unwrap().layers()[0];
        // z = 0.5*in_src - 0.25*out_dst + 2*c + 0.1
        store.slice_mut(w).copy_from_slice(&[0.5, 0.0, 0.0, -0.25, 2.0]);
        store.slice_mut(b).copy_from_slice(&[0.1]);
        let mut t = Tape::new();
        let v = enc.initial_edge_weights(&mut t, &store, &g).unwrap();
        // degrees (in, out): 0 -> (0, 2), 1 -> (1, 1), 2 -> (2, 0)
        let z: [f64; 3] = [0.0 - 0.25 + 2.0 + 0.1, 0.5 - 0.0 - 2.0 + 0.1, 0.0 - 0.0 + 1.0 + 0.1];
        for (got, z) in t.value(v).data().iter().zip(z) {
            assert!((got - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_zero_observation_is_zero() {
        let g = triangle();
        let (enc, store) = build(&g, config(EncoderKind::LearnedGcn, 1));
        let mut t = Tape::new();
        let w = enc.initial_edge_weights(&mut t, &store, &g).unwrap();
        // an all-zero observation cannot be a NodeDistribution; feed zeros
        // through the same recursion directly
        let mut x = t.constant(Matrix::zeros(3, 1));
        for &wk in enc.gcn_weights() {
            let agg = t.aggregate(x, w, g.edges(), GCN_SELF_WEIGHT).unwrap();
            let wv = t.param(&store, wk);
            let z = t.matmul(agg, wv).unwrap();
            x = t.relu(z);
        }
        assert!(t.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_isolated_node_keeps_self_loop_value() {
        let g = Graph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let mut cfg = config(EncoderKind::LearnedGcn, 1);
        cfg.gcn_dim = 1;
        cfg.gcn_layers = 2;
        let (enc, mut store) = build(&g, cfg);
        for &wk in enc.gcn_weights() {
            store.slice_mut(wk).copy_from_slice(&[1.0]);
        }
        let traj = Trajectory::from_nodes(&[0]).unwrap();
        let mut t = Tape::new();
        let w = enc.initial_edge_weights(&mut t, &store, &g).unwrap();
        let c = enc.gcn_pseudo_coordinates(&mut t, &store, &g, &traj, w).unwrap();
        assert_eq!(t.value(c).get(0, 0), GCN_SELF_WEIGHT);
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
        let perm = [2, 0, 3, 1];
        let g1 = Graph::bidirected(4, &pairs).unwrap();
        let permuted: Vec<_> = pairs.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let g2 = Graph::bidirected(4, &permuted).unwrap();
        let g1 = g1.with_node_features(degree_features(&g1)).unwrap();
        let g2 = g2.with_node_features(degree_features(&g2)).unwrap();
        let (enc, store) = build(&g1, config(EncoderKind::LearnedGcn, 2));
        let coords = |g: &Graph, nodes: &[usize]| {
            let traj = Trajectory::from_nodes(nodes).unwrap();
            let mut t = Tape::new();
            let w = enc.initial_edge_weights(&mut t, &store, g).unwrap();
            let c = enc.gcn_pseudo_coordinates(&mut t, &store, g, &traj, w).unwrap();
            t.value(c).clone()
        };
        let c1 = coords(&g1, &[0, 1]);
        let c2 = coords(&g2, &[perm[0], perm[1]]);
        for v in 0..4 {
            for (a, b) in c1.row(v).iter().zip(c2.row(perm[v])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diffusion_on_cycle() {
        let g = Graph::from_edges(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap();
        let traj = Trajectory::from_nodes(&[0]).unwrap();
        let c = diffusion_pseudo_coordinates(&g, &traj, 2);
        assert_eq!(c.get(0, 0), 0.5);
        assert_eq!(c.get(1, 0), 0.5);
        assert_eq!(c.get(2, 0), 0.0);
        for s in 0..2 {
            let total: f64 = (0..3).map(|v| c.get(v, s)).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
        let iso = Graph::from_edges(2, vec![]).unwrap();
        let c = diffusion_pseudo_coordinates(&iso, &Trajectory::from_nodes(&[1]).unwrap(), 1);
        assert_eq!(c.get(1, 0), 1.0);
    }

    #[test]
    fn fresh_diffusion_encoder_is_uniform() {
        let g = Graph::bidirected(4, &[(0, 1), (0, 2), (0, 3), (1, 2)]).unwrap();
        let (enc, store) = build(&g, config(EncoderKind::NonparametricDiffusion, 2));
        let traj = Trajectory::from_nodes(&[1, 0]).unwrap();
        let lat = enc.latent(&store, &g, &traj, WalkRule::NonBacktracking).unwrap();
        let uniform = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        assert_eq!(lat.weights(), uniform.weights());
    }

    #[test]
    fn hand_set_score_mlp_softmax() {
        // scores = c_dst (one diffusion step, one observation at node 0)
        let g = Graph::bidirected(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let mut cfg = config(EncoderKind::NonparametricDiffusion, 1);
        cfg.diffusion_steps = 1;
        cfg.mlp_hidden = vec![];
        let (enc, mut store) = build(&g, cfg);
        let (w, _) = enc.score_mlp().layers()[0];
        store.slice_mut(w).copy_from_slice(&[0.0, 1.0]);
        let traj = Trajectory::from_nodes(&[0]).unwrap();
        let lat = enc.latent(&store, &g, &traj, WalkRule::NonBacktracking).unwrap();
        // D x with x = dirac(0): node 0 keeps 1/3, nodes 1 and 2 get 1/3
        // node 1 out-edges: 1->0 (score 1/3), 1->2 (score 1/3) -> 0.5 each
        let e10 = g.find_edge(1, 0).unwrap();
        assert!((lat.weight(e10) - 0.5).abs() < 1e-15);
        let g2 = Graph::from_edges(3, vec![(0, 1), (0, 2), (1, 0), (2, 0)]).unwrap();
        let (enc2, mut store2) = build(&g2, EncoderConfig { diffusion_steps: 1, mlp_hidden: vec![], ..config(EncoderKind::NonparametricDiffusion, 1) });
        let (w2, _) = enc2.score_mlp().layers()[0];
        store2.slice_mut(w2).copy_from_slice(&[0.0, 3.0]);
        // observation at node 1: D x = {1: 1/2, 0: 1/2}; node 0 scores 1->... :
        // edge 0->1 score 3 * 0.5 = 1.5, edge 0->2 score 0
        let lat2 = enc2.latent(&store2, &g2, &Trajectory::from_nodes(&[1]).unwrap(), WalkRule::NonBacktracking).unwrap();
        let expected = 1.5f64.exp() / (1.5f64.exp() + 1.0);
        assert!((lat2.weight(0) - expected).abs() < 1e-15);
        assert_eq!(lat2.weight(2), 1.0);
    }

    #[test]
    fn scoped_encoding_matches_full_inside_scope() {
        let g = Graph::bidirected(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)]).unwrap();
        let g = g.with_node_features(degree_features(&g)).unwrap();
        let (enc, mut store) = build(&g, config(EncoderKind::LearnedGcn, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        store.values_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
        let traj = Trajectory::new(
            vec![NodeDistribution::dirac(0), NodeDistribution::new(vec![(1, 0.5), (2, 0.5)]).unwrap()],
            vec![0, 2],
        )
        .unwrap();
        let scope = EdgeScope::around(&g, traj.last().support(), 1);
        let EdgeScope::Edges(ref edges) = scope else { unreachable!() };
        let run = |scope: &EdgeScope| {
            let mut t = Tape::new();
            let w = enc.encode(&mut t, &store, &g, &traj, scope).unwrap();
            t.value(w).data().to_vec()
        };
        let full = run(&EdgeScope::All);
        let part = run(&scope);
        for &e in edges {
            assert!((full[e] - part[e]).abs() < 1e-15);
        }
        assert!(edges.len() < g.edge_count());
    }
}
