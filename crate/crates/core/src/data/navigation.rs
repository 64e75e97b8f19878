//! Human navigation paths split into a 4-node prefix and its continuation.

use std::collections::BTreeMap;
use std::path::Path;

use super::io::{open, read_paths};
use super::DataError;
use crate::baselines::edge_counts;
use crate::graph::{path_edges, Graph, NodeDistribution, NodeId, PathSample, Trajectory};
use crate::training::TrainSample;

/// Observed prefix length.
pub const PREFIX_LEN: usize = 4;
/// Name of the click-count edge feature column.
pub const CLICK_COLUMN: &str = "clicks";

#[derive(Clone, Debug, Default)]
pub struct NavigationSet {
    pub samples: Vec<TrainSample>,
    /// Full node path behind each sample.
    pub paths: Vec<Vec<NodeId>>,
    /// Paths shorter than `PREFIX_LEN + 1` nodes, which yield no sample.
    pub skipped: usize,
}

impl NavigationSet {
    /// Sample indices grouped by full path length.
    pub fn by_length(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.paths.iter().enumerate() {
            out.entry(p.len()).or_default().push(i);
        }
        out
    }
}

/// Builds samples from `(line, path)` pairs: the first four nodes become
/// dirac observations, the rest the suffix, and the last node the target.
pub fn navigation_samples(g: &Graph, paths: Vec<(usize, Vec<NodeId>)>, file: &str) -> Result<NavigationSet, DataError> {
    let mut set = NavigationSet::default();
    for (line, path) in paths {
        path_edges(g, &path).map_err(|e| DataError::parse(file, line, e.to_string()))?;
        if path.len() <= PREFIX_LEN {
            set.skipped += 1;
            continue;
        }
        let prefix = &path[..PREFIX_LEN];
        let traj = Trajectory::from_nodes(prefix)?;
        let suffix = PathSample::new(g, path[PREFIX_LEN..].to_vec())?;
        let horizon = suffix.len();
        let target = NodeDistribution::dirac(*path.last().expect("non-empty"));
        let sample = TrainSample::new(traj, Some(suffix), Some(target), horizon)
            .map_err(|e| DataError::parse(file, line, e.to_string()))?
            .with_history(prefix.to_vec());
        set.samples.push(sample);
        set.paths.push(path);
    }
    Ok(set)
}

pub fn load_navigation_paths(paths_file: &Path, g: &Graph) -> Result<NavigationSet, DataError> {
    let name = paths_file.display().to_string();
    let paths = read_paths(open(paths_file)?, &name)?;
    navigation_samples(g, paths, &name)
}

/// Graph with a `clicks` edge column holding `ln(1 + count)` of each edge
/// over `train_paths`, replacing any earlier such column.
pub fn edge_click_features(g: &Graph, train_paths: &[PathSample]) -> Result<Graph, DataError> {
    let counts = edge_counts(g, train_paths)?;
    let column: Vec<f64> = counts.iter().map(|&c| (c as f64).ln_1p()).collect();
    Ok(g.with_edge_features(g.edge_features().with_column(CLICK_COLUMN, &column))?)
}
