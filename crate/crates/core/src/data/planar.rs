//! Straight-line trajectories on a random planar k-NN graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::graph::{degree_features, Graph, NodeDistribution, NodeId, PathSample, Trajectory};
use crate::training::TrainSample;

/// Minimum distance between the two endpoints of a generating segment.
pub const MIN_SEGMENT_LENGTH: f64 = 0.5;
/// Attempts per requested trajectory before giving up.
pub const MAX_ATTEMPTS_PER_TRAJECTORY: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarConfig {
    pub n_points: usize,
    pub knn: usize,
    pub n_trajectories: usize,
    pub observations_per_traj: usize,
    pub horizon: usize,
    pub subsample_every: usize,
    pub seed: u64,
}

impl Default for PlanarConfig {
    fn default() -> Self {
        Self { n_points: 500, knn: 10, n_trajectories: 300, observations_per_traj: 4, horizon: 3, subsample_every: 3, seed: 0 }
    }
}

impl PlanarConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fields = [
            ("n_points", self.n_points),
            ("knn", self.knn),
            ("n_trajectories", self.n_trajectories),
            ("observations_per_traj", self.observations_per_traj),
            ("horizon", self.horizon),
            ("subsample_every", self.subsample_every),
        ];
        if let Some((name, _)) = fields.iter().find(|f| f.1 == 0) {
            return Err(DataError::Config(format!("{name} must be positive")));
        }
        if self.knn >= self.n_points {
            return Err(DataError::Config(format!("knn ({}) must be below n_points ({})", self.knn, self.n_points)));
        }
        Ok(())
    }

    /// Nodes a path needs to yield one sample.
    pub fn min_path_len(&self) -> usize {
        (self.observations_per_traj - 1) * self.subsample_every + self.horizon + 1
    }
}

#[derive(Clone, Debug)]
pub struct PlanarDataset {
    pub graph: Graph,
    /// Node positions, kept out of the graph features.
    pub coords: Vec<[f64; 2]>,
    pub samples: Vec<TrainSample>,
    /// Full node path behind each sample.
    pub paths: Vec<Vec<NodeId>>,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Indices of the `k` points nearest to `p`, ties broken by index.
pub(crate) fn nearest(points: &[[f64; 2]], p: [f64; 2], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> =
        points.iter().enumerate().filter(|&(i, _)| Some(i) != skip).map(|(i, &q)| (i, dist2(p, q))).collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    d.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
}

/// Bidirected graph linking each point to its `k` nearest neighbours
/// (union of both directions), with in/out degree node features.
pub fn knn_graph(points: &[[f64; 2]], k: usize) -> Result<Graph, DataError> {
    let mut pairs = std::collections::BTreeSet::new();
    for (i, &p) in points.iter().enumerate() {
        for (j, _) in nearest(points, p, k, Some(i)) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let g = Graph::bidirected(points.len(), &pairs)?;
    Ok(g.with_node_features(degree_features(&g))?)
}

/// Node path traced by the straight segment `a -> b`: nearest nodes at
/// fixed arclength steps, gaps bridged by shortest paths and immediate
/// reversals removed.
pub fn trace_segment(g: &Graph, coords: &[[f64; 2]], a: [f64; 2], b: [f64; 2], step: f64) -> Option<Vec<NodeId>> {
    let steps = (dist2(a, b).sqrt() / step).ceil().max(1.0) as usize;
    let mut raw: Vec<NodeId> = Vec::new();
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        let v = nearest(coords, p, 1, None)[0].0;
        if raw.last() != Some(&v) {
            raw.push(v);
        }
    }
    let mut path: Vec<NodeId> = vec![raw[0]];
    let push = |path: &mut Vec<NodeId>, x: NodeId| {
        let len = path.len();
        if len >= 2 && path[len - 2] == x {
            path.pop();
        } else if path[len - 1] != x {
            path.push(x);
        }
    };
    for w in raw.windows(2) {
        let from = *path.last().expect("non-empty");
        if g.find_edge(from, w[1]).is_some() {
            push(&mut path, w[1]);
        } else {
            for &x in &g.shortest_path(from, w[1])?[1..] {
                push(&mut path, x);
            }
        }
    }
    Some(path)
}

/// Points uniform in the unit square, a symmetrised k-NN graph and one
/// sample per straight segment: dirac observations every
/// `subsample_every` nodes, then `horizon` labelled hops ending at the
/// segment's last node.
pub fn generate_planar(config: &PlanarConfig) -> Result<PlanarDataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let coords: Vec<[f64; 2]> = (0..config.n_points).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let graph = knn_graph(&coords, config.knn)?;
    let step = 0.25 / (config.n_points as f64).sqrt();
    let need = config.min_path_len();

    let mut samples = Vec::with_capacity(config.n_trajectories);
    let mut paths = Vec::with_capacity(config.n_trajectories);
    let mut attempts = 0;
    while samples.len() < config.n_trajectories {
        attempts += 1;
        if attempts > MAX_ATTEMPTS_PER_TRAJECTORY * config.n_trajectories {
            return Err(DataError::Generation(format!(
                "only {} of {} trajectories reached {need} nodes",
                samples.len(),
                config.n_trajectories
            )));
        }
        let a = [rng.random::<f64>(), rng.random::<f64>()];
        let b = [rng.random::<f64>(), rng.random::<f64>()];
        if dist2(a, b).sqrt() < MIN_SEGMENT_LENGTH {
            continue;
        }
        let Some(path) = trace_segment(&graph, &coords, a, b, step) else { continue };
        if path.len() < need {
            continue;
        }
        samples.push(sample_from_path(&graph, &path, config)?);
        paths.push(path);
    }
    Ok(PlanarDataset { graph, coords, samples, paths })
}

fn sample_from_path(g: &Graph, path: &[NodeId], config: &PlanarConfig) -> Result<TrainSample, DataError> {
    let t = path.len() - 1 - config.horizon;
    let positions: Vec<usize> =
        (0..config.observations_per_traj).rev().map(|i| t - i * config.subsample_every).collect();
    let traj = Trajectory::new(
        positions.iter().map(|&p| NodeDistribution::dirac(path[p])).collect(),
        positions.iter().map(|&p| p as i64).collect(),
    )?;
    let suffix = PathSample::new(g, path[t + 1..].to_vec())?;
    let target = NodeDistribution::dirac(path[path.len() - 1]);
    TrainSample::new(traj, Some(suffix), Some(target), config.horizon)
        .map(|s| s.with_history(path[..=t].to_vec()))
        .map_err(|e| DataError::Generation(e.to_string()))
}
