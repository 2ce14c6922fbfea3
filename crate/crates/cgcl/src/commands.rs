//! The work behind each subcommand, callable without going through argv.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cgcl_core::encoder::EncoderSpec;
use cgcl_core::eval::{
    embed_graphs, embed_nodes, finetune, linear_probe_run, make_node_split, node_probe, EmbeddingSet,
    FinetuneConfig, FinetuneResult, LinearProbeConfig, NodeProbeConfig, RunStats,
};
use cgcl_core::rng::{Purpose, RunSeed};
use cgcl_core::trainer::{Clock, TrainMode, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::{target_index, RunConfig};
use crate::data::{self, detect_mode, Dataset};
use crate::error::{write, CliError, Result};
use crate::export::{append_results, write_convergence, write_embeddings, ResultRecord};
use crate::parallel::map_indexed;

pub const BEST: &str = "best.ckpt";
pub const FINAL: &str = "final.ckpt";
pub const CONVERGENCE: &str = "convergence.csv";
pub const RESOLVED: &str = "resolved-config.txt";
pub const RESULTS: &str = "results.jsonl";

/// Wall clock that continues from the time already logged by a resumed run.
struct WallClock {
    start: Instant,
    offset: f64,
}

impl Clock for WallClock {
    fn elapsed_seconds(&self) -> f64 {
        self.offset + self.start.elapsed().as_secs_f64()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub dir: PathBuf,
    /// Epochs completed, including any before a resume.
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Where a run writes when `out` is not set.
pub fn default_run_dir(cfg: &RunConfig) -> PathBuf {
    let kinds: Vec<&str> = cfg.encoders.iter().map(|k| k.name()).collect();
    PathBuf::from("runs").join(format!("{}-{}-seed{}", cfg.dataset, kinds.join("-"), cfg.train.seed))
}

fn encoder_names(specs: &[EncoderSpec]) -> Vec<String> {
    specs.iter().enumerate().map(|(i, s)| format!("{}{i}", s.kind.name())).collect()
}

/// Collaborative pretraining. Writes `final.ckpt` after every epoch so an
/// interrupted run can be resumed, then `best.ckpt`, the convergence CSV and
/// the resolved config.
pub fn pretrain(cfg: &RunConfig, resume: Option<&Path>) -> Result<PretrainReport> {
    if cfg.encoders.len() < 2 {
        return Err(CliError::Usage(format!(
            "collaborative training needs k >= 2 encoders, got {} (pass e.g. --encoders gin,gcn)",
            cfg.encoders.len()
        )));
    }
    let data = data::load(cfg)?;
    let specs = cfg.encoder_specs(data.feature_dim());
    let digest = cfg.digest();
    let dir = cfg.out.clone().unwrap_or_else(|| default_run_dir(cfg));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write(&dir.join(RESOLVED), cfg.rendered())?;

    let state = match resume {
        None => None,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_digest != digest {
                return Err(CliError::Usage(format!(
                    "{} was written under a different configuration",
                    path.display()
                )));
            }
            if ck.specs != specs || ck.mode != cfg.train.mode {
                return Err(CliError::Usage(format!("{} does not match the configured encoders", path.display())));
            }
            Some(ck.train_state()?)
        }
    };
    let offset = state
        .as_ref()
        .and_then(|s| s.log.rows.last())
        .map_or(0.0, |r| r.seconds);
    let clock = WallClock {
        start: Instant::now(),
        offset,
    };
    let train = cfg.train.clone();
    let mut trainer = match (&data, state) {
        (Dataset::Graphs(g), None) => Trainer::graph_level(g, specs.clone(), train)?,
        (Dataset::Graphs(g), Some(s)) => Trainer::resume_graph_level(g, specs.clone(), train, s)?,
        (Dataset::Nodes(g), None) => Trainer::node_level(g, specs.clone(), train)?,
        (Dataset::Nodes(g), Some(s)) => Trainer::resume_node_level(g, specs.clone(), train, s)?,
    };
    let checkpoint = |t: &Trainer| Checkpoint::from_state(cfg.train.mode, cfg.train.seed, &digest, &specs, t.state());
    while !trainer.done() {
        trainer.run_epoch(&clock)?;
        checkpoint(&trainer).save(&dir.join(FINAL))?;
    }
    checkpoint(&trainer).save(&dir.join(FINAL))?;
    let s = trainer.state();
    let best_epoch = s.stopper.best_epoch;
    Checkpoint::params_only(cfg.train.mode, cfg.train.seed, &digest, &specs, best_epoch, &s.best)
        .save(&dir.join(BEST))?;
    write_convergence(&dir.join(CONVERGENCE), &s.log, &encoder_names(&specs))?;
    Ok(PretrainReport {
        dir,
        epochs: s.epoch,
        best_epoch,
        stopped_early: s.stopped,
    })
}

/// Loads a checkpoint and the dataset, refusing mismatched modes or widths.
fn checkpoint_and_data(cfg: &RunConfig, path: &Path) -> Result<(Checkpoint, Dataset)> {
    let ck = Checkpoint::load(path)?;
    let found = detect_mode(&cfg.data);
    if ck.mode != found || cfg.train.mode != ck.mode {
        return Err(CliError::Usage(format!(
            "checkpoint is {}-level but {} holds {}-level data",
            ck.mode.name(),
            cfg.data.display(),
            found.name()
        )));
    }
    let data = data::load(cfg)?;
    if let Some(s) = ck.specs.first() {
        if s.input_dim != data.feature_dim() {
            return Err(CliError::Data(format!(
                "checkpoint expects {} input features, data has {}",
                s.input_dim,
                data.feature_dim()
            )));
        }
    }
    Ok((ck, data))
}

fn target(cfg: &RunConfig, specs: &[EncoderSpec]) -> Result<usize> {
    let t = cfg
        .target_encoder
        .as_deref()
        .ok_or_else(|| CliError::Usage("choose the encoder to evaluate with --target-encoder".into()))?;
    target_index(specs, t)
}

/// Embeddings of the target encoder of a checkpoint.
pub fn embed(cfg: &RunConfig, checkpoint: &Path) -> Result<EmbeddingSet> {
    let (ck, data) = checkpoint_and_data(cfg, checkpoint)?;
    let t = target(cfg, &ck.specs)?;
    Ok(match &data {
        Dataset::Graphs(g) => embed_graphs(&ck.specs[t], &ck.params[t], g)?,
        Dataset::Nodes(g) => embed_nodes(&ck.specs[t], &ck.params[t], g)?,
    })
}

/// Writes the embedding TSV and returns the number of data rows.
pub fn embed_to(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<usize> {
    let emb = embed(cfg, checkpoint)?;
    write_embeddings(out, &emb)?;
    Ok(emb.len())
}

/// The graph protocol: stratified 10-fold linear probe, `repeats` times,
/// repetitions spread over the thread budget.
pub fn graph_protocol(emb: &EmbeddingSet, seed: u64, repeats: usize) -> Result<RunStats> {
    let cfg = LinearProbeConfig {
        repeats,
        seed,
        ..LinearProbeConfig::default()
    };
    let runs = map_indexed(repeats, |r| linear_probe_run(emb, &cfg, r).map(|a| (r as u64, a)));
    Ok(RunStats::from_runs(runs.into_iter().collect::<cgcl_core::Result<_>>()?))
}

/// The node protocol: a fresh split of `per_class` training nodes per class
/// and `val`/`test` held-out nodes for each run, then an MLP probe.
pub fn node_protocol(
    emb: &EmbeddingSet,
    seed: u64,
    repeats: usize,
    (per_class, val, test): (usize, usize, usize),
) -> Result<RunStats> {
    let labels = emb.labels_or_err()?;
    let probe = NodeProbeConfig {
        seed,
        ..NodeProbeConfig::default()
    };
    let runs = map_indexed(repeats, |r| {
        let split = make_node_split(labels, per_class, val, test, &mut RunSeed(seed).rng(Purpose::NodeSplit(r)))?;
        node_probe(emb, &split, &probe, r).map(|a| (r as u64, a))
    });
    Ok(RunStats::from_runs(runs.into_iter().collect::<cgcl_core::Result<_>>()?))
}

/// Runs the protocol matching the data, using the run seed and repeat count
/// from `cfg`.
pub fn probe(cfg: &RunConfig, emb: &EmbeddingSet) -> Result<RunStats> {
    match cfg.train.mode {
        TrainMode::GraphLevel => graph_protocol(emb, cfg.train.seed, cfg.repeats),
        TrainMode::NodeLevel => node_protocol(
            emb,
            cfg.train.seed,
            cfg.repeats,
            (cfg.node_per_class, cfg.node_val, cfg.node_test),
        ),
    }
}

fn results_path(cfg: &RunConfig, checkpoint: Option<&Path>) -> Option<PathBuf> {
    cfg.out
        .clone()
        .or_else(|| checkpoint.and_then(Path::parent).map(Path::to_path_buf))
        .map(|d| d.join(RESULTS))
}

fn record(cfg: &RunConfig, specs: &[EncoderSpec], seed: u64, accuracy: f64) -> ResultRecord {
    ResultRecord {
        dataset: cfg.dataset.clone(),
        encoders: specs.iter().map(|s| s.kind.name().to_string()).collect(),
        seed,
        accuracy,
    }
}

/// Embeds with the target encoder, probes, and appends one record per run to
/// `results.jsonl` next to the checkpoint (or in `out`).
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<RunStats> {
    let emb = embed(cfg, checkpoint)?;
    let stats = probe(cfg, &emb)?;
    if let Some(path) = results_path(cfg, Some(checkpoint)) {
        let specs = Checkpoint::load(checkpoint)?.specs;
        let recs: Vec<_> = stats.runs.iter().map(|&(s, a)| record(cfg, &specs, s, a)).collect();
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        append_results(&path, &recs)?;
    }
    Ok(stats)
}

/// Finetunes the target encoder from `checkpoint`, or from a seeded random
/// initialization of the configured encoder when there is none.
pub fn finetune_run(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<FinetuneResult> {
    if cfg.train.mode != TrainMode::GraphLevel {
        return Err(CliError::Usage("finetuning is defined for graph-level data".into()));
    }
    let ft = FinetuneConfig {
        label_fraction: cfg.finetune_label_fraction,
        learning_rate: cfg.finetune_lr,
        weight_decay: cfg.finetune_weight_decay,
        steps: cfg.finetune_steps,
        seed: cfg.train.seed,
    };
    let (spec, params, data) = match checkpoint {
        Some(path) => {
            let (ck, data) = checkpoint_and_data(cfg, path)?;
            let t = target(cfg, &ck.specs)?;
            (ck.specs[t].clone(), Some(ck.params[t].clone()), data)
        }
        None => {
            let data = data::load(cfg)?;
            let specs = cfg.encoder_specs(data.feature_dim());
            if specs.is_empty() {
                return Err(CliError::Usage("name the encoder to finetune with --encoders".into()));
            }
            let t = match cfg.target_encoder.as_deref() {
                Some(t) => target_index(&specs, t)?,
                None => 0,
            };
            (specs[t].clone(), None, data)
        }
    };
    let Dataset::Graphs(graphs) = &data else {
        unreachable!("graph mode loads graphs")
    };
    let result = finetune(&spec, params.as_ref(), graphs, &ft)?;
    if let Some(path) = results_path(cfg, checkpoint) {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        append_results(&path, &[record(cfg, std::slice::from_ref(&spec), cfg.train.seed, result.accuracy)])?;
    }
    Ok(result)
}
