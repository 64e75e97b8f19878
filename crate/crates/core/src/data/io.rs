//! Text formats: graph TSVs, sample JSON Lines, coordinates, GPS traces,
//! node embeddings and navigation paths.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::graph::{FeatureTable, Graph, NodeDistribution, NodeId, PathSample, Trajectory};
use crate::neural::Matrix;
use crate::training::TrainSample;

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| DataError::io(path, e))
}

fn name_of(path: &Path) -> String {
    path.display().to_string()
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn lines<'a, R: BufRead + 'a>(reader: R, file: &'a str) -> impl Iterator<Item = Result<(usize, String), DataError>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Err(e) => Some(Err(DataError::Parse { file: file.to_string(), line: i + 1, msg: e.to_string() })),
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        Ok(l) => Some(Ok((i + 1, l))),
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, file: &str, line: usize) -> Result<T, DataError>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| DataError::Parse { file: file.to_string(), line, msg: format!("bad {what} `{s}`: {e}") })
}

/// Parses `nodes.tsv` (`id <features...>`) and `edges.tsv`
/// (`src dst <features...>`); both start with a header row. Edge ids follow
/// file order.
pub fn read_graph<N: BufRead, E: BufRead>(nodes: N, nodes_name: &str, edges: E, edges_name: &str) -> Result<Graph, DataError> {
    let mut rows = lines(nodes, nodes_name);
    let (_, header) = rows.next().transpose()?.ok_or_else(|| DataError::parse(nodes_name, 1, "missing header"))?;
    let node_names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut node_rows: Vec<Option<Vec<f64>>> = Vec::new();
    for row in rows {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != node_names.len() + 1 {
            return Err(DataError::parse(nodes_name, line, format!("expected {} columns, got {}", node_names.len() + 1, fields.len())));
        }
        let id: NodeId = parse_field(fields[0], "node id", nodes_name, line)?;
        let feats = fields[1..].iter().map(|f| parse_field(f, "feature", nodes_name, line)).collect::<Result<Vec<f64>, _>>()?;
        if id >= node_rows.len() {
            node_rows.resize(id + 1, None);
        }
        if node_rows[id].replace(feats).is_some() {
            return Err(DataError::parse(nodes_name, line, format!("duplicate node id {id}")));
        }
    }
    let n = node_rows.len();
    let mut node_values = Vec::with_capacity(n * node_names.len());
    for (id, row) in node_rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| DataError::Format(format!("{nodes_name}: node ids are not contiguous, {id} is missing")))?;
        node_values.extend(row);
    }

    let mut rows = lines(edges, edges_name);
    let (_, header) = rows.next().transpose()?.ok_or_else(|| DataError::parse(edges_name, 1, "missing header"))?;
    let edge_names: Vec<String> = header.split('\t').skip(2).map(str::to_string).collect();
    let mut edge_list = Vec::new();
    let mut edge_values = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rows {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != edge_names.len() + 2 {
            return Err(DataError::parse(edges_name, line, format!("expected {} columns, got {}", edge_names.len() + 2, fields.len())));
        }
        let src: NodeId = parse_field(fields[0], "source", edges_name, line)?;
        let dst: NodeId = parse_field(fields[1], "target", edges_name, line)?;
        for v in [src, dst] {
            if v >= n {
                return Err(DataError::parse(edges_name, line, format!("node {v} out of range for {n} nodes")));
            }
        }
        if src == dst {
            return Err(DataError::parse(edges_name, line, format!("self-loop on node {src}")));
        }
        if !seen.insert((src, dst)) {
            return Err(DataError::parse(edges_name, line, format!("duplicate edge {src}->{dst}")));
        }
        for f in &fields[2..] {
            edge_values.push(parse_field(f, "feature", edges_name, line)?);
        }
        edge_list.push((src, dst));
    }
    let m = edge_list.len();
    Ok(Graph::new(
        n,
        edge_list,
        FeatureTable::new(node_names, n, node_values),
        FeatureTable::new(edge_names, m, edge_values),
    )?)
}

pub fn load_graph(nodes: &Path, edges: &Path) -> Result<Graph, DataError> {
    read_graph(open(nodes)?, &name_of(nodes), open(edges)?, &name_of(edges))
}

pub fn write_graph<N: Write, E: Write>(g: &Graph, mut nodes: N, mut edges: E) -> std::io::Result<()> {
    let nf = g.node_features();
    write!(nodes, "id")?;
    for name in nf.names() {
        write!(nodes, "\t{name}")?;
    }
    writeln!(nodes)?;
    for v in 0..g.node_count() {
        write!(nodes, "{v}")?;
        for x in nf.row(v) {
            write!(nodes, "\t{x}")?;
        }
        writeln!(nodes)?;
    }
    let ef = g.edge_features();
    write!(edges, "src\tdst")?;
    for name in ef.names() {
        write!(edges, "\t{name}")?;
    }
    writeln!(edges)?;
    for (e, &(s, d)) in g.edges().iter().enumerate() {
        write!(edges, "{s}\t{d}")?;
        for x in ef.row(e) {
            write!(edges, "\t{x}")?;
        }
        writeln!(edges)?;
    }
    Ok(())
}

pub fn save_graph(g: &Graph, nodes: &Path, edges: &Path) -> Result<(), DataError> {
    let (mut nw, mut ew) = (create(nodes)?, create(edges)?);
    write_graph(g, &mut nw, &mut ew).map_err(|e| DataError::io(nodes, e))?;
    nw.flush().map_err(|e| DataError::io(nodes, e))?;
    ew.flush().map_err(|e| DataError::io(edges, e))
}

/// One line of `trajectories.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub observations: Vec<Vec<(NodeId, f64)>>,
    pub indices: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<Vec<NodeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<(NodeId, f64)>>,
    pub horizon: usize,
    /// True node path up to the current node, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<NodeId>>,
}

impl SampleRecord {
    pub fn from_sample(s: &TrainSample) -> Self {
        Self {
            observations: s.trajectory().observations().iter().map(|o| o.entries().to_vec()).collect(),
            indices: s.trajectory().indices().to_vec(),
            suffix: s.true_suffix().map(|p| p.nodes().to_vec()),
            target: s.true_target().map(|t| t.entries().to_vec()),
            horizon: s.horizon(),
            history: (!s.history().is_empty()).then(|| s.history().to_vec()),
        }
    }

    pub fn into_sample(self, g: &Graph) -> Result<TrainSample, String> {
        let obs = self
            .observations
            .into_iter()
            .map(NodeDistribution::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let traj = Trajectory::new(obs, self.indices).map_err(|e| e.to_string())?;
        let suffix = self.suffix.map(|s| PathSample::new(g, s)).transpose().map_err(|e| e.to_string())?;
        let target = self.target.map(NodeDistribution::new).transpose().map_err(|e| e.to_string())?;
        let mut sample = TrainSample::new(traj, suffix, target, self.horizon).map_err(|e| e.to_string())?;
        if let Some(h) = self.history {
            sample = sample.with_history(h);
        }
        sample.check_nodes(g).map_err(|e| e.to_string())?;
        Ok(sample)
    }
}

pub fn read_samples<R: BufRead>(reader: R, name: &str, g: &Graph) -> Result<Vec<TrainSample>, DataError> {
    lines(reader, name)
        .map(|row| {
            let (line, text) = row?;
            let rec: SampleRecord = serde_json::from_str(&text).map_err(|e| DataError::parse(name, line, e.to_string()))?;
            rec.into_sample(g).map_err(|e| DataError::parse(name, line, e))
        })
        .collect()
}

pub fn load_samples(path: &Path, g: &Graph) -> Result<Vec<TrainSample>, DataError> {
    read_samples(open(path)?, &name_of(path), g)
}

pub fn write_samples<W: Write>(mut w: W, samples: &[TrainSample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::from_sample(s))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_samples(path: &Path, samples: &[TrainSample]) -> Result<(), DataError> {
    let mut w = create(path)?;
    write_samples(&mut w, samples).and_then(|_| w.flush()).map_err(|e| DataError::io(path, e))
}

/// Rows of numbers keyed by a leading integer; a first row whose key is not
/// an integer is a header and skipped.
fn read_keyed_rows<R: BufRead>(reader: R, name: &str, width: Option<usize>) -> Result<Vec<(usize, usize, Vec<f64>)>, DataError> {
    let mut out = Vec::new();
    for (i, row) in lines(reader, name).enumerate() {
        let (line, text) = row?;
        let fields: Vec<&str> = text.split('\t').collect();
        if i == 0 && fields[0].trim().parse::<usize>().is_err() {
            continue;
        }
        let key: usize = parse_field(fields[0], "id", name, line)?;
        let values = fields[1..].iter().map(|f| parse_field(f, "value", name, line)).collect::<Result<Vec<f64>, _>>()?;
        if let Some(w) = width {
            if values.len() != w {
                return Err(DataError::parse(name, line, format!("expected {} values, got {}", w, values.len())));
            }
        }
        out.push((line, key, values));
    }
    Ok(out)
}

/// `node_id\tx\ty` rows; every node must appear exactly once.
pub fn read_coords<R: BufRead>(reader: R, name: &str, n: usize) -> Result<Vec<[f64; 2]>, DataError> {
    let mut coords: Vec<Option<[f64; 2]>> = vec![None; n];
    for (line, id, v) in read_keyed_rows(reader, name, Some(2))? {
        let slot = coords.get_mut(id).ok_or_else(|| DataError::parse(name, line, format!("node {id} out of range for {n} nodes")))?;
        if slot.replace([v[0], v[1]]).is_some() {
            return Err(DataError::parse(name, line, format!("duplicate node {id}")));
        }
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(v, c)| c.ok_or_else(|| DataError::Format(format!("{name}: no coordinates for node {v}"))))
        .collect()
}

pub fn load_coords(path: &Path, n: usize) -> Result<Vec<[f64; 2]>, DataError> {
    read_coords(open(path)?, &name_of(path), n)
}

pub fn write_coords<W: Write>(mut w: W, coords: &[[f64; 2]]) -> std::io::Result<()> {
    writeln!(w, "node_id\tx\ty")?;
    for (v, c) in coords.iter().enumerate() {
        writeln!(w, "{v}\t{}\t{}", c[0], c[1])?;
    }
    Ok(())
}

/// `trace_id\tx\ty` rows in temporal order, grouped by trace id in order of
/// first appearance.
pub fn read_traces<R: BufRead>(reader: R, name: &str) -> Result<Vec<(usize, Vec<[f64; 2]>)>, DataError> {
    let mut traces: Vec<(usize, Vec<[f64; 2]>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (_, id, v) in read_keyed_rows(reader, name, Some(2))? {
        let slot = *index.entry(id).or_insert_with(|| {
            traces.push((id, Vec::new()));
            traces.len() - 1
        });
        traces[slot].1.push([v[0], v[1]]);
    }
    Ok(traces)
}

pub fn load_traces(path: &Path) -> Result<Vec<(usize, Vec<[f64; 2]>)>, DataError> {
    read_traces(open(path)?, &name_of(path))
}

pub fn write_traces<W: Write>(mut w: W, traces: &[(usize, Vec<[f64; 2]>)]) -> std::io::Result<()> {
    writeln!(w, "trace_id\tx\ty")?;
    for (id, points) in traces {
        for p in points {
            writeln!(w, "{id}\t{}\t{}", p[0], p[1])?;
        }
    }
    Ok(())
}

/// `node_id\te_1 ... e_d`; returns an `n x d` matrix.
pub fn read_embeddings<R: BufRead>(reader: R, name: &str, n: usize) -> Result<Matrix, DataError> {
    let rows = read_keyed_rows(reader, name, None)?;
    let d = rows.first().map_or(0, |r| r.2.len());
    let mut filled = vec![false; n];
    let mut m = Matrix::zeros(n, d);
    for (line, id, v) in rows {
        if v.len() != d {
            return Err(DataError::parse(name, line, format!("expected {d} values, got {}", v.len())));
        }
        if id >= n || std::mem::replace(&mut filled[id], true) {
            return Err(DataError::parse(name, line, format!("node {id} out of range or repeated")));
        }
        m.row_mut(id).copy_from_slice(&v);
    }
    if let Some(v) = filled.iter().position(|f| !f) {
        return Err(DataError::Format(format!("{name}: no embedding for node {v}")));
    }
    Ok(m)
}

pub fn load_embeddings(path: &Path, n: usize) -> Result<Matrix, DataError> {
    read_embeddings(open(path)?, &name_of(path), n)
}

/// One whitespace-separated node path per line, with its line number.
pub fn read_paths<R: BufRead>(reader: R, name: &str) -> Result<Vec<(usize, Vec<NodeId>)>, DataError> {
    lines(reader, name)
        .map(|row| {
            let (line, text) = row?;
            let nodes = text.split_whitespace().map(|t| parse_field(t, "node id", name, line)).collect::<Result<_, _>>()?;
            Ok((line, nodes))
        })
        .collect()
}

pub fn write_paths<W: Write>(mut w: W, paths: &[Vec<NodeId>]) -> std::io::Result<()> {
    for p in paths {
        let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", parts.join(" "))?;
    }
    Ok(())
}
