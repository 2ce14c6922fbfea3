//! The collaborative pretraining loop.
//!
//! Every step embeds the same input with all `k` encoders on one tape, forms
//! each encoder's loss against the (detached) embeddings of the others, and
//! back-propagates their sum once. With detached keys the gradient reaching
//! encoder `p` is exactly the gradient of its own loss, so the `k` Adam steps
//! that follow, taken in index order, are the per-encoder updates of the
//! algorithm. All embeddings are computed before any update, which makes the
//! update order numerically irrelevant.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::contrastive::{encoder_loss, ContrastiveConfig, LossMode, Similarity};
use crate::encoder::{forward, init_params, EncoderKind, EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::graph::{make_batches, Graph, PreparedGraph};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamState};
use crate::rng::{Purpose, RunSeed};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Minibatches of whole graphs, pooled embeddings, in-batch negatives.
    GraphLevel,
    /// One graph, node embeddings, every other node as a negative.
    NodeLevel,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::GraphLevel => "graph",
            TrainMode::NodeLevel => "node",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "graph" | "graph_level" => Some(TrainMode::GraphLevel),
            "node" | "node_level" => Some(TrainMode::NodeLevel),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Graphs per minibatch; ignored at node level.
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Epochs without a new minimum of the mean loss before stopping.
    pub early_stop_patience: usize,
    pub similarity: Similarity,
    pub detach_keys: bool,
}

impl TrainConfig {
    pub fn graph_level() -> Self {
        TrainConfig {
            mode: TrainMode::GraphLevel,
            seed: 0,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            batch_size: 128,
            epochs: 100,
            temperature: 0.5,
            hidden_dim: 128,
            dropout: 0.5,
            early_stop_patience: 20,
            similarity: Similarity::Dot,
            detach_keys: true,
        }
    }

    pub fn node_level() -> Self {
        TrainConfig {
            mode: TrainMode::NodeLevel,
            epochs: 200,
            hidden_dim: 64,
            ..Self::graph_level()
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.temperature,
            mode: match self.mode {
                TrainMode::GraphLevel => LossMode::Batchwise,
                TrainMode::NodeLevel => LossMode::Graphwise,
            },
            similarity: self.similarity,
            detach_keys: self.detach_keys,
        }
    }

    /// Encoder specs with this config's width and dropout and the
    /// mode's default depth and pooling.
    pub fn encoder_specs(&self, kinds: &[EncoderKind], input_dim: usize) -> Vec<EncoderSpec> {
        kinds
            .iter()
            .map(|&kind| {
                let base = match self.mode {
                    TrainMode::GraphLevel => EncoderSpec::graph_level(kind, input_dim, self.hidden_dim),
                    TrainMode::NodeLevel => EncoderSpec::node_level(kind, input_dim, self.hidden_dim),
                };
                EncoderSpec {
                    dropout: self.dropout,
                    ..base
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        Adam::new(self.learning_rate, self.weight_decay)?;
        self.contrastive().validate()?;
        if self.mode == TrainMode::GraphLevel && self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument("early-stop patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the convergence log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based.
    pub epoch: usize,
    pub encoder: usize,
    pub mean_loss: f64,
    /// Wall-clock seconds since training started, at the end of the epoch.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceLog {
    pub rows: Vec<LogRow>,
}

impl ConvergenceLog {
    /// Mean losses of `encoder`, by epoch.
    pub fn curve(&self, encoder: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.encoder == encoder)
            .map(|r| r.mean_loss)
            .collect()
    }

    /// The per-epoch loss averaged over encoders, by epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() < r.epoch {
                sums.resize(r.epoch, (0.0, 0));
            }
            sums[r.epoch - 1].0 += r.mean_loss;
            sums[r.epoch - 1].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Source of elapsed time; the core has no clock of its own.
pub trait Clock {
    fn elapsed_seconds(&self) -> f64;
}

/// A clock that never advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }
}

/// Tracks the running minimum of the epoch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    /// 1-based epoch of the minimum; 0 before the first observation.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience: patience.max(1),
            best_epoch: 0,
            best_loss: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch` and reports whether it is a new minimum.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

/// The epoch (1-based) whose parameters early stopping keeps, given the
/// per-epoch mean losses.
pub fn early_stop(losses: &[f64], patience: usize) -> usize {
    let mut stopper = EarlyStopper::new(patience);
    for (i, &l) in losses.iter().enumerate() {
        stopper.observe(i + 1, l);
        if stopper.should_stop() {
            break;
        }
    }
    stopper.best_epoch
}

/// Everything needed to continue training exactly where it left off.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub params: Vec<EncoderParams>,
    pub adam: Vec<AdamState>,
    pub stopper: EarlyStopper,
    /// Parameters at `stopper.best_epoch`.
    pub best: Vec<EncoderParams>,
    pub log: ConvergenceLog,
    pub stopped: bool,
}

impl TrainState {
    pub fn fresh(specs: &[EncoderSpec], cfg: &TrainConfig) -> Result<Self> {
        let seed = RunSeed(cfg.seed);
        let params = specs
            .iter()
            .enumerate()
            .map(|(i, s)| init_params(s, &mut seed.rng(Purpose::Init(i))))
            .collect::<Result<Vec<_>>>()?;
        let adam = params.iter().map(|p| AdamState::new(&p.tensors)).collect();
        Ok(TrainState {
            epoch: 0,
            best: params.clone(),
            params,
            adam,
            stopper: EarlyStopper::new(cfg.early_stop_patience),
            log: ConvergenceLog::default(),
            stopped: false,
        })
    }
}

/// Result of a pretraining run.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    /// Parameters at the early-stop epoch.
    pub best: Vec<EncoderParams>,
    pub best_epoch: usize,
    /// Parameters after the last completed epoch.
    pub last: Vec<EncoderParams>,
    pub log: ConvergenceLog,
}

/// Per-encoder losses and parameter gradients of one collaborative step.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub losses: Vec<f64>,
    pub grads: Vec<Vec<Matrix>>,
}

/// Embeds `input` with every encoder, forms each encoder's loss and returns
/// the losses with the gradient reaching each encoder's parameters.
pub fn collaborative_gradients<R: rand::Rng + ?Sized>(
    specs: &[EncoderSpec],
    params: &[EncoderParams],
    input: &PreparedGraph,
    cfg: &ContrastiveConfig,
    training: bool,
    rng: &mut R,
) -> Result<StepGradients> {
    let k = specs.len();
    if k < 2 {
        return Err(Error::TooFewEncoders(k));
    }
    let mut tape = Tape::new();
    let mut handles: Vec<Vec<Var>> = Vec::with_capacity(k);
    let mut embeddings = Vec::with_capacity(k);
    for (spec, p) in specs.iter().zip(params) {
        let vars: Vec<Var> = p.tensors.iter().map(|t| tape.param(t.clone())).collect();
        embeddings.push(forward(&mut tape, spec, &vars, input, training, rng)?);
        handles.push(vars);
    }
    let mut losses = Vec::with_capacity(k);
    let mut total: Option<Var> = None;
    for p in 0..k {
        let l = encoder_loss(&mut tape, p, &embeddings, cfg)?;
        losses.push(tape.value(l).get(0, 0));
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    tape.backward(total.expect("k >= 2"))?;
    let grads = handles
        .iter()
        .map(|vars| vars.iter().map(|&v| tape.grad_or_zeros(v)).collect())
        .collect();
    Ok(StepGradients { losses, grads })
}

enum Data<'d> {
    Graphs(&'d [Graph]),
    Node(PreparedGraph),
}

/// Epoch-by-epoch driver over a [`TrainState`].
pub struct Trainer<'d> {
    specs: Vec<EncoderSpec>,
    cfg: TrainConfig,
    data: Data<'d>,
    state: TrainState,
}

impl<'d> Trainer<'d> {
    pub fn graph_level(graphs: &'d [Graph], specs: Vec<EncoderSpec>, cfg: TrainConfig) -> Result<Self> {
        let state = TrainState::fresh(&specs, &cfg)?;
        Self::resume_graph_level(graphs, specs, cfg, state)
    }

    pub fn resume_graph_level(
        graphs: &'d [Graph],
        specs: Vec<EncoderSpec>,
        cfg: TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        if cfg.mode != TrainMode::GraphLevel {
            return Err(Error::InvalidArgument("graph-level training needs mode graph".into()));
        }
        if graphs.len() < 2 {
            return Err(Error::Insufficient(format!(
                "graph-level training needs at least 2 graphs, got {}",
                graphs.len()
            )));
        }
        for spec in &specs {
            if spec.pooling == crate::encoder::Pooling::None {
                return Err(Error::InvalidArgument("graph-level encoders must pool".into()));
            }
        }
        Self::check(&specs, &cfg, &state, graphs[0].feature_dim())?;
        Ok(Trainer {
            specs,
            cfg,
            data: Data::Graphs(graphs),
            state,
        })
    }

    fn check(specs: &[EncoderSpec], cfg: &TrainConfig, state: &TrainState, input_dim: usize) -> Result<()> {
        if specs.len() < 2 {
            return Err(Error::TooFewEncoders(specs.len()));
        }
        cfg.validate()?;
        if state.params.len() != specs.len() || state.adam.len() != specs.len() || state.best.len() != specs.len() {
            return Err(Error::InvalidArgument("training state does not match the encoder list".into()));
        }
        for (spec, p) in specs.iter().zip(&state.params) {
            spec.validate()?;
            if spec.input_dim != input_dim {
                return Err(Error::InvalidArgument(format!(
                    "{} encoder expects {} input features, data has {input_dim}",
                    spec.kind.name(),
                    spec.input_dim
                )));
            }
            p.check(spec)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn specs(&self) -> &[EncoderSpec] {
        &self.specs
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// True once the epoch budget is spent or early stopping fired.
    pub fn done(&self) -> bool {
        self.state.stopped || self.state.epoch >= self.cfg.epochs
    }

    /// Runs one epoch and returns each encoder's mean loss.
    pub fn run_epoch(&mut self, clock: &dyn Clock) -> Result<Vec<f64>> {
        let epoch = self.state.epoch + 1;
        let k = self.specs.len();
        let contrastive = self.cfg.contrastive();
        let adam = Adam::new(self.cfg.learning_rate, self.cfg.weight_decay)?;
        let mut rng = RunSeed(self.cfg.seed).rng(Purpose::Epoch(epoch));
        let mut sums = alloc::vec![0.0; k];
        let mut steps = 0usize;

        let batches;
        let prepared: Vec<PreparedGraph>;
        let inputs: Vec<&PreparedGraph> = match &self.data {
            Data::Node(g) => alloc::vec![g],
            Data::Graphs(graphs) => {
                batches = make_batches(graphs, self.cfg.batch_size, &mut rng)?;
                prepared = batches.iter().map(PreparedGraph::from_batch).collect();
                prepared.iter().collect()
            }
        };

        for (b, input) in inputs.into_iter().enumerate() {
            let step = collaborative_gradients(&self.specs, &self.state.params, input, &contrastive, true, &mut rng)
                .map_err(|e| numeric_context(e, epoch, b + 1, 0))?;
            for (p, &l) in step.losses.iter().enumerate() {
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                        encoder: p,
                    });
                }
                sums[p] += l;
            }
            for (p, grads) in step.grads.iter().enumerate() {
                let spec = &self.specs[p];
                let names = |i: usize| -> String {
                    let n = spec.param_shapes().into_iter().nth(i).map(|s| s.0).unwrap_or_default();
                    format!("encoder {p} ({}) {n}", spec.kind.name())
                };
                let mut refs: Vec<&mut Matrix> = self.state.params[p].tensors.iter_mut().collect();
                adam.step(&mut refs, grads, &mut self.state.adam[p], &names)?;
            }
            steps += 1;
        }

        let means: Vec<f64> = sums.iter().map(|s| s / steps.max(1) as f64).collect();
        let seconds = clock.elapsed_seconds();
        for (p, &m) in means.iter().enumerate() {
            self.state.log.rows.push(LogRow {
                epoch,
                encoder: p,
                mean_loss: m,
                seconds,
            });
        }
        self.state.epoch = epoch;
        let overall = means.iter().sum::<f64>() / k as f64;
        if self.state.stopper.observe(epoch, overall) {
            self.state.best = self.state.params.clone();
        }
        if self.state.stopper.should_stop() {
            self.state.stopped = true;
        }
        Ok(means)
    }

    /// Runs epochs until done.
    pub fn run(&mut self, clock: &dyn Clock) -> Result<()> {
        while !self.done() {
            self.run_epoch(clock)?;
        }
        Ok(())
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn finish(self) -> Pretrained {
        let s = self.state;
        let (best, best_epoch) = if s.stopper.best_epoch == 0 {
            (s.params.clone(), 0)
        } else {
            (s.best, s.stopper.best_epoch)
        };
        Pretrained {
            best,
            best_epoch,
            last: s.params,
            log: s.log,
        }
    }
}

impl Trainer<'static> {
    pub fn node_level(graph: &Graph, specs: Vec<EncoderSpec>, cfg: TrainConfig) -> Result<Trainer<'static>> {
        let state = TrainState::fresh(&specs, &cfg)?;
        Trainer::resume_node_level(graph, specs, cfg, state)
    }

    pub fn resume_node_level(
        graph: &Graph,
        specs: Vec<EncoderSpec>,
        cfg: TrainConfig,
        state: TrainState,
    ) -> Result<Trainer<'static>> {
        if cfg.mode != TrainMode::NodeLevel {
            return Err(Error::InvalidArgument("node-level training needs mode node".into()));
        }
        for spec in &specs {
            if spec.pooling != crate::encoder::Pooling::None {
                return Err(Error::InvalidArgument("node-level encoders must not pool".into()));
            }
        }
        Trainer::check(&specs, &cfg, &state, graph.feature_dim())?;
        Ok(Trainer {
            specs,
            cfg,
            data: Data::Node(PreparedGraph::from_graph(graph)),
            state,
        })
    }
}

fn numeric_context(e: Error, epoch: usize, batch: usize, encoder: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch, encoder },
        other => other,
    }
}

/// Collaborative pretraining on a set of graphs.
pub fn pretrain_graph_level(graphs: &[Graph], specs: &[EncoderSpec], cfg: &TrainConfig) -> Result<Pretrained> {
    let mut t = Trainer::graph_level(graphs, specs.to_vec(), cfg.clone())?;
    t.run(&NoClock)?;
    Ok(t.finish())
}

/// Collaborative pretraining on the nodes of one graph.
pub fn pretrain_node_level(graph: &Graph, specs: &[EncoderSpec], cfg: &TrainConfig) -> Result<Pretrained> {
    let mut t = Trainer::node_level(graph, specs.to_vec(), cfg.clone())?;
    t.run(&NoClock)?;
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_rule() {
        assert_eq!(early_stop(&[5.0, 4.0, 3.0, 2.0], 2), 4);
        assert_eq!(early_stop(&[3.0, 2.0, 1.0, 2.0, 3.0], 2), 3);
        assert_eq!(early_stop(&[3.0, 2.0, 2.5], 100), 2);
        assert_eq!(early_stop(&[], 3), 0);
    }

    #[test]
    fn epoch_means_average_encoders() {
        let log = ConvergenceLog {
            rows: alloc::vec![
                LogRow { epoch: 1, encoder: 0, mean_loss: 2.0, seconds: 0.0 },
                LogRow { epoch: 1, encoder: 1, mean_loss: 4.0, seconds: 0.0 },
                LogRow { epoch: 2, encoder: 0, mean_loss: 1.0, seconds: 0.0 },
                LogRow { epoch: 2, encoder: 1, mean_loss: 1.0, seconds: 0.0 },
            ],
        };
        assert_eq!(log.epoch_means(), [3.0, 1.0]);
        assert_eq!(log.curve(1), [4.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::graph_level();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            temperature: 0.0,
            ..TrainConfig::node_level()
        };
        assert!(cfg.validate().is_err());
    }
}
