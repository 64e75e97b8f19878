//! Losses and the mini-batch training loop.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{keyword_enum, EdgeScope, EncodeError, Encoder, EncoderConfig};
use crate::graph::{Graph, GraphError, NodeDistribution, NodeId, PathSample, Trajectory};
use crate::nbwalk::{suffix_likelihood, suffix_likelihood_var, target_marginal, target_marginal_var, LatentGraph, MarginalMode, WalkError, WalkRule};
use crate::neural::{Adam, AdamConfig, Checkpoint, NeuralError, ParamStore, Tape, Var};

/// Added to probabilities inside every log.
pub const PROB_CLAMP: f64 = 1e-30;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("non-finite loss at sample {sample} (epoch {epoch})")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        TrainError::Walk(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SuffixNll,
    TargetCe,
}

keyword_enum!(LossKind { "suffix_nll" => LossKind::SuffixNll, "target_ce" => LossKind::TargetCe });

/// One labelled trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    trajectory: Trajectory,
    true_suffix: Option<PathSample>,
    true_target: Option<NodeDistribution>,
    horizon: usize,
    history: Vec<NodeId>,
}

impl TrainSample {
    /// `true_suffix` lists the `horizon` nodes visited after the last
    /// observation.
    pub fn new(
        trajectory: Trajectory,
        true_suffix: Option<PathSample>,
        true_target: Option<NodeDistribution>,
        horizon: usize,
    ) -> Result<Self, TrainError> {
        if true_suffix.is_none() && true_target.is_none() {
            return Err(TrainError::Sample("needs a suffix or a target".into()));
        }
        if horizon == 0 {
            return Err(TrainError::Sample("horizon must be positive".into()));
        }
        if let Some(s) = &true_suffix {
            if s.len() != horizon {
                return Err(TrainError::Sample(format!("suffix has {} nodes but horizon is {horizon}", s.len())));
            }
        }
        Ok(Self { trajectory, true_suffix, true_target, horizon, history: Vec::new() })
    }

    /// Attaches the true node path up to and including the current node,
    /// when known. Only evaluation reads it.
    pub fn with_history(mut self, history: Vec<NodeId>) -> Self {
        self.history = history;
        self
    }

    pub fn history(&self) -> &[NodeId] {
        &self.history
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn true_suffix(&self) -> Option<&PathSample> {
        self.true_suffix.as_ref()
    }

    pub fn true_target(&self) -> Option<&NodeDistribution> {
        self.true_target.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn check_nodes(&self, g: &Graph) -> Result<(), TrainError> {
        self.trajectory.check_nodes(g)?;
        if let Some(t) = &self.true_target {
            t.check_nodes(g)?;
        }
        if let Some(s) = &self.true_suffix {
            PathSample::new(g, s.nodes().to_vec())?;
        }
        if !self.history.is_empty() {
            let mut full = self.history.clone();
            if let Some(s) = &self.true_suffix {
                full.extend_from_slice(s.nodes());
            }
            PathSample::new(g, full)?;
        }
        Ok(())
    }

    fn suffix(&self) -> Result<&PathSample, TrainError> {
        self.true_suffix.as_ref().ok_or_else(|| TrainError::Sample("no true suffix".into()))
    }

    fn target(&self) -> Result<&NodeDistribution, TrainError> {
        self.true_target.as_ref().ok_or_else(|| TrainError::Sample("no true target".into()))
    }

    /// Edges whose weights the given loss reads. Weights outside stay
    /// uniform during training and get no gradient.
    pub fn loss_scope(&self, g: &Graph, kind: LossKind) -> EdgeScope {
        let start = self.trajectory.last().support();
        match kind {
            LossKind::SuffixNll => {
                let suffix = self.true_suffix.iter().flat_map(|s| s.nodes().iter().copied());
                EdgeScope::around(g, start.chain(suffix), 0)
            }
            LossKind::TargetCe => EdgeScope::around(g, start, self.horizon - 1),
        }
    }
}

/// `-ln(P(suffix | x_t) + 1e-30)`, floored at 0 against probabilities that
/// round above one.
pub fn suffix_nll_loss(lat: &LatentGraph<'_>, sample: &TrainSample) -> Result<f64, TrainError> {
    let p = suffix_likelihood(lat, sample.trajectory.last(), sample.suffix()?.nodes())?;
    Ok((-(p + PROB_CLAMP).ln()).max(0.0))
}

/// `-sum_v y_v ln(x̂_v + 1e-30)` with `x̂` the exact walk marginal, floored
/// at 0.
pub fn target_ce_loss(lat: &LatentGraph<'_>, sample: &TrainSample) -> Result<f64, TrainError> {
    let target = sample.target()?;
    let x_hat = target_marginal(lat, sample.trajectory.last(), sample.horizon, MarginalMode::Exact)?;
    Ok((-target.entries().iter().map(|&(v, y)| y * (x_hat[v] + PROB_CLAMP).ln()).sum::<f64>()).max(0.0))
}

pub fn sample_loss(lat: &LatentGraph<'_>, sample: &TrainSample, kind: LossKind) -> Result<f64, TrainError> {
    match kind {
        LossKind::SuffixNll => suffix_nll_loss(lat, sample),
        LossKind::TargetCe => target_ce_loss(lat, sample),
    }
}

/// Tape version of [`sample_loss`] on an `m x 1` weight variable.
pub fn sample_loss_var<'g>(
    tape: &mut Tape<'g>,
    weights: Var,
    g: &'g Graph,
    rule: WalkRule,
    sample: &TrainSample,
    kind: LossKind,
) -> Result<Var, TrainError> {
    let x_t = sample.trajectory.last();
    match kind {
        LossKind::SuffixNll => {
            let p = suffix_likelihood_var(tape, weights, g, rule, x_t, sample.suffix()?.nodes())?;
            let lp = tape.log_eps(p, PROB_CLAMP);
            let nll = tape.scale(lp, -1.0);
            Ok(tape.relu(nll))
        }
        LossKind::TargetCe => {
            let y = sample.target()?.to_dense(g.node_count());
            let x_hat = target_marginal_var(tape, weights, g, rule, x_t, sample.horizon)?;
            let lx = tape.log_eps(x_hat, PROB_CLAMP);
            let ce = tape.dot_const(lx, y.iter().map(|v| -v).collect())?;
            Ok(tape.relu(ce))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement and keep
    /// the best parameters; 0 disables.
    pub patience: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::TargetCe,
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            patience: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

/// Encoder architecture plus its parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub params: ParamStore,
}

impl Model {
    /// Fresh model whose parameters are drawn from `seed`.
    pub fn init(g: &Graph, config: EncoderConfig, seed: u64) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(g, config, &mut rng)
    }

    fn init_with(g: &Graph, config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        let mut params = ParamStore::new();
        let encoder = Encoder::new(config, g.node_features().dim(), g.edge_features().dim(), &mut params, rng)?;
        Ok(Self { encoder, params })
    }

    /// Rebuilds a model from its config and a checkpoint.
    pub fn from_checkpoint(g: &Graph, config: EncoderConfig, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let mut model = Self::init(g, config, ckpt.header.seed)?;
        ckpt.apply_to(&mut model.params)?;
        Ok(model)
    }

    pub fn latent<'g>(&self, g: &'g Graph, traj: &Trajectory, rule: WalkRule) -> Result<LatentGraph<'g>, TrainError> {
        Ok(self.encoder.latent(&self.params, g, traj, rule)?)
    }

    /// Loss of one sample, reading only the weights in its scope.
    pub fn loss(&self, g: &Graph, sample: &TrainSample, kind: LossKind) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let w = self.encoder.encode(&mut tape, &self.params, g, &sample.trajectory, &sample.loss_scope(g, kind))?;
        let loss = sample_loss_var(&mut tape, w, g, WalkRule::NonBacktracking, sample, kind)?;
        Ok(tape.scalar(loss))
    }

    /// Mean loss over `samples`, evaluated in parallel and summed in order.
    pub fn mean_loss(&self, g: &Graph, samples: &[TrainSample], kind: LossKind) -> Result<f64, TrainError> {
        let losses = samples.par_iter().map(|s| self.loss(g, s, kind)).collect::<Result<Vec<_>, _>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }

    /// Mean loss of a batch; its gradient is added into `params.grad`.
    /// Returns `(mean, per-sample losses)`.
    pub fn accumulate_batch(
        &mut self,
        g: &Graph,
        batch: &[&TrainSample],
        kind: LossKind,
    ) -> Result<(f64, Vec<f64>), TrainError> {
        let mut tape = Tape::new();
        let prepared = self.encoder.prepare(&mut tape, &self.params, g)?;
        let mut losses = Vec::with_capacity(batch.len());
        let mut total: Option<Var> = None;
        for sample in batch {
            let scope = sample.loss_scope(g, kind);
            let w = self.encoder.encode_prepared(&mut tape, &self.params, g, &prepared, &sample.trajectory, &scope)?;
            let loss = sample_loss_var(&mut tape, w, g, WalkRule::NonBacktracking, sample, kind)?;
            losses.push(tape.scalar(loss));
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });
        }
        let Some(total) = total else { return Ok((0.0, losses)) };
        let mean = tape.scale(total, 1.0 / batch.len() as f64);
        let value = tape.scalar(mean);
        tape.backward(mean, 1.0, self.params.grad_mut())?;
        Ok((value, losses))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Trains a fresh model. Sample order is reshuffled each epoch from the
/// seeded generator, so equal inputs give bit-identical parameters.
pub fn train(g: &Graph, train: &[TrainSample], valid: &[TrainSample], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    for s in train.iter().chain(valid) {
        s.check_nodes(g)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init_with(g, config.encoder.clone(), &mut rng)?;
    let mut adam = Adam::new(model.params.len(), AdamConfig::default());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train[i]).collect();
            model.params.zero_grad();
            let (_, losses) = model.accumulate_batch(g, &batch, config.loss_kind)?;
            if let Some(pos) = losses.iter().position(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, sample: chunk[pos] });
            }
            epoch_total += losses.iter().sum::<f64>();
            adam.step(&mut model.params, config.lr)?;
        }
        let train_loss = epoch_total / train.len().max(1) as f64;
        let valid_loss = if valid.is_empty() { None } else { Some(model.mean_loss(g, valid, config.loss_kind)?) };
        curve.push(EpochRecord { epoch, train_loss, valid_loss });

        if let (Some(v), true) = (valid_loss, config.patience > 0) {
            match &best {
                Some((b, _, _)) if v >= *b => {}
                _ => best = Some((v, epoch, model.params.values().to_vec())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }

    let mut best_epoch = curve.last().map_or(0, |r| r.epoch);
    if let Some((_, epoch, values)) = best {
        model.params.set_values(values);
        best_epoch = epoch;
    }
    Ok(TrainOutcome { model, curve, best_epoch })
}

/// Writes `epoch\ttrain_loss\tvalid_loss`; a missing validation loss is `nan`.
pub fn write_loss_curve<W: Write>(mut w: W, curve: &[EpochRecord]) -> io::Result<()> {
    writeln!(w, "epoch\ttrain_loss\tvalid_loss")?;
    for r in curve {
        writeln!(w, "{}\t{}\t{}", r.epoch, r.train_loss, r.valid_loss.unwrap_or(f64::NAN))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderKind, SoftmaxKind};
    use crate::graph::degree_features;

    fn triangle() -> Graph {
        Graph::bidirected(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    fn small_config(kind: EncoderKind) -> EncoderConfig {
        EncoderConfig {
            gcn_layers: 2,
            gcn_dim: 4,
            mlp_hidden: vec![8],
            num_observations: 2,
            encoder_kind: kind,
            diffusion_steps: 2,
            softmax_kind: SoftmaxKind::TrueSoftmax,
        }
    }

    #[test]
    fn sample_validation() {
        let traj = Trajectory::from_nodes(&[0]).unwrap();
        assert!(TrainSample::new(traj.clone(), None, None, 1).is_err());
        assert!(TrainSample::new(traj.clone(), Some(PathSample::unchecked(vec![1, 2])), None, 1).is_err());
        assert!(TrainSample::new(traj, Some(PathSample::unchecked(vec![1])), None, 1).is_ok());
    }

    #[test]
    fn suffix_nll_examples() {
        let chain = Graph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let lat = LatentGraph::uniform(&chain, WalkRule::NonBacktracking);
        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), Some(PathSample::unchecked(vec![1, 2])), None, 2).unwrap();
        assert!(suffix_nll_loss(&lat, &s).unwrap().abs() < 1e-12);

        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), Some(PathSample::unchecked(vec![1, 2])), None, 2).unwrap();
        assert!((suffix_nll_loss(&lat, &s).unwrap() - 2f64.ln()).abs() < 1e-12);

        // A -> B -> A backtracks
        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), Some(PathSample::unchecked(vec![1, 0])), None, 2).unwrap();
        assert!((suffix_nll_loss(&lat, &s).unwrap() - 69.07755278982137).abs() < 1e-9);
    }

    #[test]
    fn target_ce_examples() {
        let chain = Graph::from_edges(2, vec![(0, 1)]).unwrap();
        let lat = LatentGraph::uniform(&chain, WalkRule::NonBacktracking);
        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), None, Some(NodeDistribution::dirac(1)), 1).unwrap();
        assert!(target_ce_loss(&lat, &s).unwrap().abs() < 1e-12);

        let g = triangle();
        let lat = LatentGraph::uniform(&g, WalkRule::NonBacktracking);
        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), None, Some(NodeDistribution::dirac(1)), 1).unwrap();
        assert!((target_ce_loss(&lat, &s).unwrap() - 2f64.ln()).abs() < 1e-12);

        let s = TrainSample::new(Trajectory::from_nodes(&[0]).unwrap(), None, Some(NodeDistribution::dirac(0)), 1).unwrap();
        assert!(target_ce_loss(&lat, &s).unwrap() > 69.0);
    }

    #[test]
    fn tape_losses_match_forward() {
        let g = Graph::bidirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]).unwrap();
        let g = g.with_node_features(degree_features(&g)).unwrap();
        let model = Model::init(&g, small_config(EncoderKind::LearnedGcn), 3).unwrap();
        let traj = Trajectory::from_nodes(&[0, 1]).unwrap();
        let s = TrainSample::new(traj.clone(), Some(PathSample::new(&g, vec![2, 3]).unwrap()), Some(NodeDistribution::dirac(3)), 2).unwrap();
        let lat = model.latent(&g, &traj, WalkRule::NonBacktracking).unwrap();
        for kind in [LossKind::SuffixNll, LossKind::TargetCe] {
            let a = model.loss(&g, &s, kind).unwrap();
            let b = sample_loss(&lat, &s, kind).unwrap();
            assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
        }
    }

    fn five_node_sample() -> (Graph, TrainSample) {
        let g = Graph::bidirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3), (0, 2)]).unwrap();
        let g = g.with_node_features(degree_features(&g)).unwrap();
        let s = TrainSample::new(
            Trajectory::from_nodes(&[0, 1]).unwrap(),
            Some(PathSample::new(&g, vec![3, 4]).unwrap()),
            Some(NodeDistribution::dirac(4)),
            2,
        )
        .unwrap();
        (g, s)
    }

    #[test]
    fn zero_epochs_keeps_init() {
        let (g, s) = five_node_sample();
        let config = TrainConfig { epochs: 0, encoder: small_config(EncoderKind::LearnedGcn), seed: 5, ..Default::default() };
        let out = train(&g, &[s], &[], &config).unwrap();
        let init = Model::init(&g, config.encoder.clone(), 5).unwrap();
        assert_eq!(out.model.params, init.params);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn single_sample_overfits() {
        let (g, s) = five_node_sample();
        for kind in [LossKind::SuffixNll, LossKind::TargetCe] {
            let config = TrainConfig {
                loss_kind: kind,
                epochs: 500,
                batch_size: 1,
                lr: 0.01,
                encoder: small_config(EncoderKind::LearnedGcn),
                ..Default::default()
            };
            let out = train(&g, std::slice::from_ref(&s), &[], &config).unwrap();
            let first = out.curve[0].train_loss;
            let last = out.model.loss(&g, &s, kind).unwrap();
            assert!(last < 0.1 * first, "{kind}: {first} -> {last}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (g, s) = five_node_sample();
        let config = TrainConfig { epochs: 5, batch_size: 2, encoder: small_config(EncoderKind::LearnedGcn), ..Default::default() };
        let samples = vec![s.clone(), s];
        let a = train(&g, &samples, &samples, &config).unwrap();
        let b = train(&g, &samples, &samples, &config).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn patience_restores_best() {
        let (g, s) = five_node_sample();
        // a valid set the model can only get worse on while fitting `s`
        let other = TrainSample::new(
            Trajectory::from_nodes(&[0, 1]).unwrap(),
            Some(PathSample::new(&g, vec![2, 3]).unwrap()),
            None,
            2,
        )
        .unwrap();
        let config = TrainConfig {
            loss_kind: LossKind::SuffixNll,
            epochs: 200,
            batch_size: 1,
            lr: 0.05,
            patience: 3,
            encoder: small_config(EncoderKind::LearnedGcn),
            ..Default::default()
        };
        let out = train(&g, &[s], std::slice::from_ref(&other), &config).unwrap();
        assert!(out.curve.len() < 200);
        let best = out.curve.iter().map(|r| r.valid_loss.unwrap()).fold(f64::INFINITY, f64::min);
        let kept = out.model.loss(&g, &other, LossKind::SuffixNll).unwrap();
        assert_eq!(kept, best);
    }

    #[test]
    fn loss_curve_format() {
        let mut buf = Vec::new();
        let curve = [
            EpochRecord { epoch: 1, train_loss: 0.5, valid_loss: None },
            EpochRecord { epoch: 2, train_loss: 0.25, valid_loss: Some(0.75) },
        ];
        write_loss_curve(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch\ttrain_loss\tvalid_loss\n1\t0.5\tNaN\n2\t0.25\t0.75\n");
    }
}
