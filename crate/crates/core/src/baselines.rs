//! Non-learned walk baselines and a bilinear next-target scorer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphError, NodeId, PathSample};
use crate::nbwalk::{LatentGraph, WalkError, WalkRule};
use crate::neural::{Adam, AdamConfig, Init, Matrix, NeuralError, ParamId, ParamStore, Tape, Var};

/// Uniform weights over each node's out-edges; `backtracking_allowed`
/// switches the walk to a plain random walk.
pub fn uniform_weights(g: &Graph, backtracking_allowed: bool) -> LatentGraph<'_> {
    let rule = if backtracking_allowed { WalkRule::Backtracking } else { WalkRule::NonBacktracking };
    LatentGraph::uniform(g, rule)
}

/// `w(e) ∝ count(e) + alpha`, normalised per source node, where `count`
/// is how often `e` is traversed by `paths`.
pub fn reweighted_weights<'g>(g: &'g Graph, paths: &[PathSample], alpha: f64) -> Result<LatentGraph<'g>, WalkError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(WalkError::InvalidWeights(format!("smoothing must be positive, got {alpha}")));
    }
    let counts = edge_counts(g, paths)?;
    let mut weights = vec![0.0; g.edge_count()];
    for v in 0..g.node_count() {
        let out = g.out_edges(v);
        let total: f64 = out.iter().map(|&e| counts[e] as f64 + alpha).sum();
        for &e in out {
            weights[e] = (counts[e] as f64 + alpha) / total;
        }
    }
    LatentGraph::new(g, weights, WalkRule::NonBacktracking)
}

/// Number of traversals of every edge by `paths`.
pub fn edge_counts(g: &Graph, paths: &[PathSample]) -> Result<Vec<u64>, GraphError> {
    let mut counts = vec![0u64; g.edge_count()];
    for p in paths {
        for e in p.edges(g)? {
            counts[e] += 1;
        }
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearConfig {
    pub prefix_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BilinearConfig {
    fn default() -> Self {
        Self { prefix_len: 4, lr: 0.01, epochs: 50, batch_size: 16, seed: 0 }
    }
}

/// Scores every node `j` as `sum_i f_iᵀ W_i f_j` from a fixed-length
/// prefix, followed by a softmax over all nodes.
#[derive(Clone, Debug)]
pub struct BilinearScorer {
    embeddings: Matrix,
    prefix_len: usize,
    params: ParamStore,
    maps: Vec<ParamId>,
}

impl BilinearScorer {
    /// All `W_i` start at zero, which scores every node equally.
    pub fn new(embeddings: Matrix, prefix_len: usize) -> Self {
        assert!(prefix_len >= 1);
        let d = embeddings.cols();
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let maps = (0..prefix_len).map(|i| params.add(&format!("bilinear.{i}"), d, d, Init::Zeros, &mut rng)).collect();
        Self { embeddings, prefix_len, params, maps }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameter of each prefix slot; slot `i` stores `W_iᵀ`.
    pub fn maps(&self) -> &[ParamId] {
        &self.maps
    }

    /// Last `prefix_len` nodes, left-padded with the first one.
    pub fn fit_prefix(&self, prefix: &[NodeId]) -> Vec<NodeId> {
        assert!(!prefix.is_empty(), "empty prefix");
        let k = self.prefix_len;
        if prefix.len() >= k {
            prefix[prefix.len() - k..].to_vec()
        } else {
            let mut out = vec![prefix[0]; k - prefix.len()];
            out.extend_from_slice(prefix);
            out
        }
    }

    fn check(&self, nodes: &[NodeId]) -> Result<(), GraphError> {
        let n = self.embeddings.rows();
        match nodes.iter().find(|&&v| v >= n) {
            Some(&v) => Err(GraphError::NodeOutOfRange { node: v, n }),
            None => Ok(()),
        }
    }

    fn logits<'a>(&self, tape: &mut Tape<'a>, prefix: &[NodeId]) -> Result<Var, NeuralError> {
        let prefix = self.fit_prefix(prefix);
        let mut acc: Option<Var> = None;
        for (&v, &map) in prefix.iter().zip(&self.maps) {
            let f = tape.constant(Matrix::column(self.embeddings.row(v).to_vec()));
            let w = tape.param(&self.params, map);
            let fw = tape.matmul(w, f)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, fw)?,
                None => fw,
            });
        }
        let emb = tape.constant(self.embeddings.clone());
        tape.matmul(emb, acc.expect("prefix_len >= 1"))
    }

    /// Softmax over all nodes.
    pub fn predict(&self, prefix: &[NodeId]) -> Result<Vec<f64>, GraphError> {
        self.check(prefix)?;
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, prefix).expect("shapes fixed at construction");
        let z = tape.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|x| x / total).collect())
    }

    /// Mean cross entropy of `(prefix, target)` pairs; adds its gradient
    /// into the parameter gradient buffer.
    fn accumulate(&mut self, batch: &[&(Vec<NodeId>, NodeId)]) -> Result<f64, NeuralError> {
        let n = self.embeddings.rows();
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        for (prefix, target) in batch {
            let logits = self.logits(&mut tape, prefix)?;
            let p = tape.grouped_softmax(logits, vec![(0..n).collect()])?;
            let lp = tape.log_eps(p, 1e-30);
            let mut onehot = vec![0.0; n];
            onehot[*target] = -1.0;
            let loss = tape.dot_const(lp, onehot)?;
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        let Some(total) = total else { return Ok(0.0) };
        let mean = tape.scale(total, 1.0 / batch.len() as f64);
        let value = tape.scalar(mean);
        tape.backward(mean, 1.0, self.params.grad_mut())?;
        Ok(value)
    }

    /// Trains on `(prefix, target)` pairs with Adam; returns the mean loss
    /// of each epoch.
    pub fn train(&mut self, samples: &[(Vec<NodeId>, NodeId)], config: &BilinearConfig) -> Result<Vec<f64>, WalkError> {
        use rand::seq::SliceRandom;
        for (prefix, target) in samples {
            self.check(prefix)?;
            self.check(&[*target])?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut adam = Adam::new(self.params.len(), AdamConfig::default());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for chunk in order.chunks(config.batch_size.max(1)) {
                let batch: Vec<_> = chunk.iter().map(|&i| &samples[i]).collect();
                self.params.zero_grad();
                sum += self.accumulate(&batch)? * batch.len() as f64;
                adam.step(&mut self.params, config.lr)?;
            }
            curve.push(sum / samples.len().max(1) as f64);
        }
        Ok(curve)
    }
}
