//! Directed graphs with fixed edge indexing, node distributions, trajectories
//! and paths.
//!
//! Edge ids are positional: the i-th edge handed to [`Graph::new`] (or the i-th
//! data row of `edges.tsv`) gets id `i`. Every per-edge vector elsewhere in the
//! crate is indexed by these ids.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Mass tolerance for [`NodeDistribution`] normalization.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {edge} endpoint {node} out of range for {n} nodes")]
    EndpointOutOfRange { edge: usize, node: NodeId, n: usize },
    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: NodeId, dst: NodeId },
    #[error("self-loop on node {0} is not allowed in input graphs")]
    SelfLoop(NodeId),
    #[error("feature table has {got} rows, expected {expected}")]
    FeatureRows { got: usize, expected: usize },
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: NodeId, n: usize },
    #[error("nodes at path index {index} and {next} are not adjacent ({src}->{dst})", next = index + 1)]
    NotAdjacent { index: usize, src: NodeId, dst: NodeId },
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
}

/// A dense row-major table of named feature columns.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureTable {
    names: Vec<String>,
    rows: usize,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, rows: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * names.len(), "feature table shape");
        Self { names, rows, values }
    }

    /// A table with `rows` rows and no columns.
    pub fn empty(rows: usize) -> Self {
        Self { names: Vec::new(), rows, values: Vec::new() }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Returns a copy with column `name` set to `column`, appending it when absent.
    pub fn with_column(&self, name: &str, column: &[f64]) -> Self {
        assert_eq!(column.len(), self.rows, "column length");
        let mut names = self.names.clone();
        let pos = match names.iter().position(|n| n == name) {
            Some(p) => p,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        let d = names.len();
        let mut values = Vec::with_capacity(self.rows * d);
        for (i, &c) in column.iter().enumerate() {
            for j in 0..d {
                if j == pos {
                    values.push(c);
                } else {
                    values.push(self.values[i * self.dim() + j]);
                }
            }
        }
        Self { names, rows: self.rows, values }
    }
}

/// Immutable directed graph without parallel edges or self-loops.
#[derive(Clone, Debug)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    out_adjacency: Vec<Vec<EdgeId>>,
    in_adjacency: Vec<Vec<EdgeId>>,
    reverse_edge: Vec<Option<EdgeId>>,
    index: HashMap<(NodeId, NodeId), EdgeId>,
    node_features: FeatureTable,
    edge_features: FeatureTable,
}

impl Graph {
    pub fn new(
        node_count: usize,
        edges: Vec<(NodeId, NodeId)>,
        node_features: FeatureTable,
        edge_features: FeatureTable,
    ) -> Result<Self, GraphError> {
        if node_features.rows() != node_count {
            return Err(GraphError::FeatureRows { got: node_features.rows(), expected: node_count });
        }
        if edge_features.rows() != edges.len() {
            return Err(GraphError::FeatureRows { got: edge_features.rows(), expected: edges.len() });
        }
        let mut index = HashMap::with_capacity(edges.len());
        let mut out_adjacency = vec![Vec::new(); node_count];
        let mut in_adjacency = vec![Vec::new(); node_count];
        for (id, &(src, dst)) in edges.iter().enumerate() {
            for node in [src, dst] {
                if node >= node_count {
                    return Err(GraphError::EndpointOutOfRange { edge: id, node, n: node_count });
                }
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if index.insert((src, dst), id).is_some() {
                return Err(GraphError::DuplicateEdge { src, dst });
            }
            out_adjacency[src].push(id);
            in_adjacency[dst].push(id);
        }
        let reverse_edge = edges.iter().map(|&(s, d)| index.get(&(d, s)).copied()).collect();
        Ok(Self {
            node_count,
            edges,
            out_adjacency,
            in_adjacency,
            reverse_edge,
            index,
            node_features,
            edge_features,
        })
    }

    /// Graph without any features.
    pub fn from_edges(node_count: usize, edges: Vec<(NodeId, NodeId)>) -> Result<Self, GraphError> {
        let m = edges.len();
        Self::new(node_count, edges, FeatureTable::empty(node_count), FeatureTable::empty(m))
    }

    /// Every unordered pair becomes two directed edges, in the order given.
    pub fn bidirected(node_count: usize, pairs: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let edges = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        Self::from_edges(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> (NodeId, NodeId) {
        self.edges[e]
    }

    pub fn source(&self, e: EdgeId) -> NodeId {
        self.edges[e].0
    }

    pub fn target(&self, e: EdgeId) -> NodeId {
        self.edges[e].1
    }

    /// Outgoing edge ids of `v`, sorted ascending.
    pub fn out_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.out_adjacency[v]
    }

    /// Incoming edge ids of `v`, sorted ascending.
    pub fn in_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.in_adjacency[v]
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.out_adjacency[v].len()
    }

    pub fn in_degree(&self, v: NodeId) -> usize {
        self.in_adjacency[v].len()
    }

    pub fn reverse_edge(&self, e: EdgeId) -> Option<EdgeId> {
        self.reverse_edge[e]
    }

    pub fn find_edge(&self, src: NodeId, dst: NodeId) -> Option<EdgeId> {
        self.index.get(&(src, dst)).copied()
    }

    pub fn node_features(&self) -> &FeatureTable {
        &self.node_features
    }

    pub fn edge_features(&self) -> &FeatureTable {
        &self.edge_features
    }

    pub fn with_node_features(&self, features: FeatureTable) -> Result<Self, GraphError> {
        Self::new(self.node_count, self.edges.clone(), features, self.edge_features.clone())
    }

    pub fn with_edge_features(&self, features: FeatureTable) -> Result<Self, GraphError> {
        Self::new(self.node_count, self.edges.clone(), self.node_features.clone(), features)
    }

    pub fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if v < self.node_count {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange { node: v, n: self.node_count })
        }
    }

    /// Hop distances from `source` following out-edges; `None` when unreachable.
    pub fn bfs_distances(&self, source: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or(0);
            for &e in self.out_edges(v) {
                let u = self.target(e);
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Shortest path (fewest hops) from `src` to `dst`, ties broken towards
    /// smaller edge ids.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let mut parent: Vec<Option<NodeId>> = vec![None; self.node_count];
        let mut seen = vec![false; self.node_count];
        let mut queue = std::collections::VecDeque::new();
        seen[src] = true;
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            if v == dst {
                let mut path = vec![dst];
                let mut cur = dst;
                while let Some(p) = parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for &e in self.out_edges(v) {
                let u = self.target(e);
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some(v);
                    queue.push_back(u);
                }
            }
        }
        None
    }
}

/// Forward edges traversed by a node sequence.
pub fn path_edges(g: &Graph, nodes: &[NodeId]) -> Result<Vec<EdgeId>, GraphError> {
    for &v in nodes {
        g.check_node(v)?;
    }
    nodes
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            g.find_edge(w[0], w[1]).ok_or(GraphError::NotAdjacent { index, src: w[0], dst: w[1] })
        })
        .collect()
}

/// Node sequence visited by a chain of consecutive edges.
pub fn edges_to_nodes(g: &Graph, edges: &[EdgeId]) -> Vec<NodeId> {
    let mut nodes = Vec::with_capacity(edges.len() + 1);
    if let Some(&first) = edges.first() {
        nodes.push(g.source(first));
    }
    nodes.extend(edges.iter().map(|&e| g.target(e)));
    nodes
}

/// In-degree (column 0) and out-degree (column 1) of every node.
pub fn degree_features(g: &Graph) -> FeatureTable {
    let n = g.node_count();
    let mut values = Vec::with_capacity(2 * n);
    for v in 0..n {
        values.push(g.in_degree(v) as f64);
        values.push(g.out_degree(v) as f64);
    }
    FeatureTable::new(vec!["in_degree".into(), "out_degree".into()], n, values)
}

/// Sparse probability distribution over nodes, entries sorted by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(NodeId, f64)>", into = "Vec<(NodeId, f64)>")]
pub struct NodeDistribution {
    entries: Vec<(NodeId, f64)>,
}

impl NodeDistribution {
    /// Validates masses (finite, nonnegative, summing to one within
    /// [`MASS_TOLERANCE`]). Duplicate ids are merged and zero entries dropped.
    pub fn new(entries: Vec<(NodeId, f64)>) -> Result<Self, GraphError> {
        let merged = merge_entries(entries)?;
        let total: f64 = merged.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(GraphError::Distribution(format!("total mass {total} != 1")));
        }
        Ok(Self { entries: merged })
    }

    /// Rescales nonnegative masses to sum to one.
    pub fn normalized(entries: Vec<(NodeId, f64)>) -> Result<Self, GraphError> {
        let merged = merge_entries(entries)?;
        let total: f64 = merged.iter().map(|e| e.1).sum();
        if total <= 0.0 {
            return Err(GraphError::Distribution("zero total mass".into()));
        }
        Ok(Self { entries: merged.into_iter().map(|(v, m)| (v, m / total)).collect() })
    }

    pub fn dirac(v: NodeId) -> Self {
        Self { entries: vec![(v, 1.0)] }
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn mass(&self, v: NodeId) -> f64 {
        self.entries.binary_search_by_key(&v, |e| e.0).map(|i| self.entries[i].1).unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Node carrying the most mass (smallest id on ties).
    pub fn argmax(&self) -> NodeId {
        let mut best = self.entries[0];
        for &e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        best.0
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(v, m) in &self.entries {
            out[v] = m;
        }
        out
    }

    pub fn check_nodes(&self, g: &Graph) -> Result<(), GraphError> {
        self.entries.iter().try_for_each(|&(v, _)| g.check_node(v))
    }

    /// Convex combination `(1 - alpha) * self + alpha * other`.
    pub fn mix(&self, other: &Self, alpha: f64) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(GraphError::Distribution(format!("mixing weight {alpha} outside [0, 1]")));
        }
        let mut entries: Vec<(NodeId, f64)> =
            self.entries.iter().map(|&(v, m)| (v, (1.0 - alpha) * m)).collect();
        entries.extend(other.entries.iter().map(|&(v, m)| (v, alpha * m)));
        Self::normalized(entries)
    }
}

fn merge_entries(mut entries: Vec<(NodeId, f64)>) -> Result<Vec<(NodeId, f64)>, GraphError> {
    if let Some(&(v, m)) = entries.iter().find(|e| !e.1.is_finite() || e.1 < 0.0) {
        return Err(GraphError::Distribution(format!("invalid mass {m} on node {v}")));
    }
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(NodeId, f64)> = Vec::with_capacity(entries.len());
    for (v, m) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += m,
            _ => merged.push((v, m)),
        }
    }
    merged.retain(|e| e.1 > 0.0);
    Ok(merged)
}

impl TryFrom<Vec<(NodeId, f64)>> for NodeDistribution {
    type Error = GraphError;

    fn try_from(entries: Vec<(NodeId, f64)>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<NodeDistribution> for Vec<(NodeId, f64)> {
    fn from(d: NodeDistribution) -> Self {
        d.entries
    }
}

/// `dirac(v)` on `g`, checking the node id.
pub fn dirac(g: &Graph, v: NodeId) -> Result<NodeDistribution, GraphError> {
    g.check_node(v)?;
    Ok(NodeDistribution::dirac(v))
}

/// Observed node distributions with strictly increasing time indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    observations: Vec<NodeDistribution>,
    indices: Vec<i64>,
}

impl Trajectory {
    pub fn new(observations: Vec<NodeDistribution>, indices: Vec<i64>) -> Result<Self, GraphError> {
        if observations.is_empty() {
            return Err(GraphError::Trajectory("no observations".into()));
        }
        if observations.len() != indices.len() {
            return Err(GraphError::Trajectory(format!(
                "{} observations but {} indices",
                observations.len(),
                indices.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::Trajectory("indices not strictly increasing".into()));
        }
        Ok(Self { observations, indices })
    }

    /// Trajectory of diracs on consecutive time steps.
    pub fn from_nodes(nodes: &[NodeId]) -> Result<Self, GraphError> {
        let obs = nodes.iter().map(|&v| NodeDistribution::dirac(v)).collect();
        Self::new(obs, (0..nodes.len() as i64).collect())
    }

    pub fn observations(&self) -> &[NodeDistribution] {
        &self.observations
    }

    pub fn indices(&self) -> &[i64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Last known position x_t.
    pub fn last(&self) -> &NodeDistribution {
        self.observations.last().expect("trajectory is never empty")
    }

    pub fn check_nodes(&self, g: &Graph) -> Result<(), GraphError> {
        self.observations.iter().try_for_each(|o| o.check_nodes(g))
    }

    /// Keeps the last `k` observations, or left-pads with copies of the
    /// earliest one (at decreasing indices) when shorter.
    pub fn fit_to(&self, k: usize) -> Self {
        assert!(k >= 1);
        let len = self.len();
        if len >= k {
            return Self {
                observations: self.observations[len - k..].to_vec(),
                indices: self.indices[len - k..].to_vec(),
            };
        }
        let pad = k - len;
        let mut observations = vec![self.observations[0].clone(); pad];
        observations.extend(self.observations.iter().cloned());
        let first = self.indices[0];
        let mut indices: Vec<i64> = (0..pad as i64).map(|i| first - (pad as i64 - i)).collect();
        indices.extend(self.indices.iter().copied());
        Self { observations, indices }
    }
}

/// A node sequence whose consecutive pairs are joined by directed edges.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathSample {
    nodes: Vec<NodeId>,
}

impl PathSample {
    pub fn new(g: &Graph, nodes: Vec<NodeId>) -> Result<Self, GraphError> {
        path_edges(g, &nodes)?;
        Ok(Self { nodes })
    }

    /// Wraps a node sequence without adjacency validation. Used for labels
    /// that are checked against a specific start node later on.
    pub fn unchecked(nodes: Vec<NodeId>) -> Self {
        Self { nodes }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self, g: &Graph) -> Result<Vec<EdgeId>, GraphError> {
        path_edges(g, &self.nodes)
    }
}

impl fmt::Display for PathSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.nodes.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}
