//! Noisy GPS-like traces on a jittered road grid, and the mapping from
//! raw positions to node distributions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::planar::nearest;
use super::DataError;
use crate::graph::{degree_features, Graph, NodeDistribution, NodeId, PathSample, Trajectory};
use crate::training::TrainSample;

/// Added to distances before inverting them into masses.
pub const DISTANCE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GpsMappingConfig {
    pub k_nearest: usize,
    pub min_separation: f64,
}

impl Default for GpsMappingConfig {
    fn default() -> Self {
        Self { k_nearest: 5, min_separation: 50.0 }
    }
}

/// Mass over the `k_nearest` nodes of `p`, proportional to inverse distance.
pub fn map_point(coords: &[[f64; 2]], p: [f64; 2], k_nearest: usize) -> NodeDistribution {
    let near = nearest(coords, p, k_nearest, None);
    let w: Vec<(NodeId, f64)> = near.iter().map(|&(v, d)| (v, 1.0 / (DISTANCE_EPS + d))).collect();
    NodeDistribution::normalized(w).expect("positive masses")
}

/// Drops points closer than `min_separation` to the previously kept point
/// and maps the rest. Observation indices are positions in `points`.
pub fn map_gps_to_distribution(points: &[[f64; 2]], coords: &[[f64; 2]], config: &GpsMappingConfig) -> Result<Trajectory, DataError> {
    if config.k_nearest == 0 {
        return Err(DataError::Config("k_nearest must be at least 1".into()));
    }
    if coords.is_empty() {
        return Err(DataError::Config("no node coordinates".into()));
    }
    let mut obs = Vec::new();
    let mut idx = Vec::new();
    let mut last: Option<[f64; 2]> = None;
    for (i, &p) in points.iter().enumerate() {
        if let Some(q) = last {
            if ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() < config.min_separation {
                continue;
            }
        }
        last = Some(p);
        obs.push(map_point(coords, p, config.k_nearest));
        idx.push(i as i64);
    }
    if obs.is_empty() {
        return Err(DataError::Generation("trace is empty after filtering".into()));
    }
    Ok(Trajectory::new(obs, idx)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpsConfig {
    /// Intersections per side of the square grid.
    pub grid_size: usize,
    pub spacing: f64,
    /// Uniform displacement of each intersection, in both axes.
    pub jitter: f64,
    /// Fraction of grid roads removed (never disconnecting the network or
    /// leaving a node with fewer than two roads).
    pub removal_fraction: f64,
    pub n_trajectories: usize,
    pub observations_per_traj: usize,
    pub horizon: usize,
    /// Standard deviation of the positional noise.
    pub gps_noise: f64,
    /// Probability of going straight at a crossing.
    pub straight_bias: f64,
    pub seed: u64,
    pub mapping: GpsMappingConfig,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self {
            grid_size: 15,
            spacing: 100.0,
            jitter: 20.0,
            removal_fraction: 0.15,
            n_trajectories: 300,
            observations_per_traj: 5,
            horizon: 3,
            gps_noise: 15.0,
            straight_bias: 0.6,
            seed: 0,
            mapping: GpsMappingConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpsDataset {
    pub graph: Graph,
    pub coords: Vec<[f64; 2]>,
    /// Raw noisy positions, one trace per sample.
    pub traces: Vec<(usize, Vec<[f64; 2]>)>,
    pub samples: Vec<TrainSample>,
    pub paths: Vec<Vec<NodeId>>,
}

fn connected_with_min_degree(n: usize, pairs: &[(usize, usize)], removed: &[bool]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        if !removed[i] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    if adj.iter().any(|a| a.len() < 2) {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !std::mem::replace(&mut seen[u], true) {
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Jittered grid with some roads removed; every road is two-way.
pub fn road_grid(config: &GpsConfig, rng: &mut ChaCha8Rng) -> Result<(Graph, Vec<[f64; 2]>), DataError> {
    let s = config.grid_size;
    let coords: Vec<[f64; 2]> = (0..s * s)
        .map(|id| {
            let (i, j) = (id / s, id % s);
            let dx = rng.random_range(-config.jitter..=config.jitter);
            let dy = rng.random_range(-config.jitter..=config.jitter);
            [i as f64 * config.spacing + dx, j as f64 * config.spacing + dy]
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..s {
        for j in 0..s {
            let v = i * s + j;
            if i + 1 < s {
                pairs.push((v, v + s));
            }
            if j + 1 < s {
                pairs.push((v, v + 1));
            }
        }
    }
    let target = (config.removal_fraction * pairs.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    let mut removed = vec![false; pairs.len()];
    let mut count = 0;
    for i in order {
        if count == target {
            break;
        }
        removed[i] = true;
        if connected_with_min_degree(s * s, &pairs, &removed) {
            count += 1;
        } else {
            removed[i] = false;
        }
    }
    let kept: Vec<_> = pairs.iter().zip(&removed).filter(|(_, &r)| !r).map(|(&p, _)| p).collect();
    let g = Graph::bidirected(s * s, &kept)?;
    let g = g.with_node_features(degree_features(&g))?;
    Ok((g, coords))
}

/// A drive that never turns back: at each crossing it goes straight with
/// probability `straight_bias`, otherwise picks uniformly among the roads
/// other than the one it came from.
fn drive(g: &Graph, coords: &[[f64; 2]], len: usize, straight_bias: f64, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let mut path = vec![rng.random_range(0..g.node_count())];
    while path.len() < len {
        let v = *path.last().expect("non-empty");
        let prev = (path.len() >= 2).then(|| path[path.len() - 2]);
        let options: Vec<NodeId> = g.out_edges(v).iter().map(|&e| g.target(e)).filter(|&u| Some(u) != prev).collect();
        let next = match prev {
            Some(u) if rng.random::<f64>() < straight_bias => {
                let heading = [coords[v][0] - coords[u][0], coords[v][1] - coords[u][1]];
                let norm = |d: [f64; 2]| (d[0] * d[0] + d[1] * d[1]).sqrt();
                let cos = |w: NodeId| {
                    let d = [coords[w][0] - coords[v][0], coords[w][1] - coords[v][1]];
                    (heading[0] * d[0] + heading[1] * d[1]) / (norm(heading) * norm(d))
                };
                *options.iter().max_by(|&&a, &&b| cos(a).total_cmp(&cos(b)).then(b.cmp(&a))).expect("degree >= 2")
            }
            _ => *options.choose(rng).expect("degree >= 2"),
        };
        path.push(next);
    }
    path
}

/// Samples drives on a road grid, perturbs every visited intersection into
/// a noisy position and maps the positions to node distributions. The
/// first `observations_per_traj` positions form the trajectory, the next
/// `horizon` nodes the suffix, and the mapped last position the target.
pub fn generate_gps(config: &GpsConfig) -> Result<GpsDataset, DataError> {
    if config.grid_size < 2 || config.n_trajectories == 0 || config.observations_per_traj == 0 || config.horizon == 0 {
        return Err(DataError::Config("grid_size >= 2 and positive counts required".into()));
    }
    if !(0.0..1.0).contains(&config.removal_fraction) || !(0.0..=1.0).contains(&config.straight_bias) {
        return Err(DataError::Config("removal_fraction and straight_bias must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (graph, coords) = road_grid(config, &mut rng)?;
    let noise = Normal::new(0.0, config.gps_noise).map_err(|e| DataError::Config(e.to_string()))?;
    let len = config.observations_per_traj + config.horizon;
    let t = config.observations_per_traj - 1;

    let (mut samples, mut paths, mut traces) = (Vec::new(), Vec::new(), Vec::new());
    let mut attempts = 0;
    while samples.len() < config.n_trajectories {
        attempts += 1;
        if attempts > 100 * config.n_trajectories {
            return Err(DataError::Generation("too many traces lost their last observation".into()));
        }
        let path = drive(&graph, &coords, len, config.straight_bias, &mut rng);
        let points: Vec<[f64; 2]> =
            path.iter().map(|&v| [coords[v][0] + noise.sample(&mut rng), coords[v][1] + noise.sample(&mut rng)]).collect();
        let traj = map_gps_to_distribution(&points[..=t], &coords, &config.mapping)?;
        if *traj.indices().last().expect("non-empty") != t as i64 {
            continue;
        }
        let target = map_point(&coords, points[len - 1], config.mapping.k_nearest);
        let suffix = PathSample::new(&graph, path[t + 1..].to_vec())?;
        let sample = TrainSample::new(traj, Some(suffix), Some(target), config.horizon)
            .map_err(|e| DataError::Generation(e.to_string()))?
            .with_history(path[..=t].to_vec());
        traces.push((samples.len(), points));
        samples.push(sample);
        paths.push(path);
    }
    Ok(GpsDataset { graph, coords, traces, samples, paths })
}
