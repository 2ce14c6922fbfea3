//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{load_config, parse_config, preset, ConfigMap, RunConfig};
use crate::error::{CliError, Result};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "cgcl", version, about = "Collaborative graph contrastive learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain k >= 2 encoders collaboratively.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint written by an earlier pretrain.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Embed with one encoder of a checkpoint and run the linear or MLP probe.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Probe repetitions.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Finetune one encoder with a linear head on a labeled subset.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this checkpoint instead of a random initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        label_fraction: Option<f64>,
    },
    /// Write the embeddings of one encoder as TSV.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file.
        #[arg(long)]
        tsv: PathBuf,
    },
    /// Gradient checks, loss oracles and invariance suites.
    Selftest,
}

/// Flags shared by the commands that read data. Each overrides the key of the
/// same name from the config file or preset.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Dataset directory: TUDataset files or a node interchange directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the dataset inside a TUDataset directory.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated encoder kinds: gcn, gin, gat.
    #[arg(long)]
    pub encoders: Option<String>,
    /// graph or node.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Encoder index or kind used by evaluate, finetune and embed.
    #[arg(long)]
    pub target_encoder: Option<String>,
    /// Published per-dataset settings, e.g. mutag or cora.
    #[arg(long)]
    pub dataset_preset: Option<String>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    /// Merges `base`, the preset, the config file and the flags, in that
    /// order of increasing precedence.
    pub fn merge(&self, base: ConfigMap) -> Result<ConfigMap> {
        let mut map = base;
        if let Some(p) = &self.dataset_preset {
            map.extend(preset(p)?);
        }
        if let Some(path) = &self.config {
            map.extend(load_config(path)?);
        }
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("data", path(&self.data));
        set("dataset", self.dataset.clone());
        set("encoders", self.encoders.clone());
        set("mode", self.mode.clone());
        set("epochs", self.epochs.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        set("weight_decay", self.weight_decay.map(|v| v.to_string()));
        set("hidden", self.hidden.map(|v| v.to_string()));
        set("dropout", self.dropout.map(|v| v.to_string()));
        set("temperature", self.temperature.map(|v| v.to_string()));
        set("batch_size", self.batch_size.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("target_encoder", self.target_encoder.clone());
        set("out", path(&self.out));
        Ok(map)
    }

    pub fn resolve(&self, base: ConfigMap) -> Result<RunConfig> {
        RunConfig::resolve(self.merge(base)?)
    }
}

/// The resolved config saved next to a checkpoint, without its `out`, so a
/// later command reproduces the settings of the run that wrote it.
fn base_from_checkpoint(checkpoint: &Path) -> Result<ConfigMap> {
    let Some(dir) = checkpoint.parent() else {
        return Ok(ConfigMap::new());
    };
    let path = dir.join(commands::RESOLVED);
    if !path.is_file() {
        return Ok(ConfigMap::new());
    }
    let mut map = parse_config(&path, &crate::error::read_to_string(&path)?)?;
    map.remove("out");
    Ok(map)
}

/// Runs one command, printing human-readable results to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { run, resume } => {
            let cfg = run.resolve(ConfigMap::new())?;
            let r = commands::pretrain(&cfg, resume.as_deref())?;
            println!(
                "pretrained {} epochs (best epoch {}{}) -> {}",
                r.epochs,
                r.best_epoch,
                if r.stopped_early { ", stopped early" } else { "" },
                r.dir.display()
            );
        }
        Command::Evaluate {
            run,
            checkpoint,
            repeats,
        } => {
            let mut base = base_from_checkpoint(&checkpoint)?;
            if let Some(r) = repeats {
                base.insert("repeats".into(), r.to_string());
            }
            let cfg = run.resolve(base)?;
            let stats = commands::evaluate(&cfg, &checkpoint)?;
            println!("accuracy {:.4} ± {:.4} over {} runs", stats.mean, stats.std, stats.runs.len());
        }
        Command::Finetune {
            mut run,
            checkpoint,
            steps,
            label_fraction,
        } => {
            let mut base = match &checkpoint {
                Some(c) => base_from_checkpoint(c)?,
                None => ConfigMap::new(),
            };
            // Here the optimizer flags set the finetuning optimizer.
            if let Some(lr) = run.lr.take() {
                base.insert("finetune_lr".into(), lr.to_string());
            }
            if let Some(wd) = run.weight_decay.take() {
                base.insert("finetune_weight_decay".into(), wd.to_string());
            }
            let mut map = run.merge(base)?;
            if let Some(s) = steps {
                map.insert("finetune_steps".into(), s.to_string());
            }
            if let Some(f) = label_fraction {
                map.insert("finetune_label_fraction".into(), f.to_string());
            }
            let cfg = RunConfig::resolve(map)?;
            let r = commands::finetune_run(&cfg, checkpoint.as_deref())?;
            println!(
                "finetuned {} steps on {} graphs: accuracy {:.4} on {} held-out graphs",
                r.steps, r.train_size, r.accuracy, r.test_size
            );
        }
        Command::Embed { run, checkpoint, tsv } => {
            let cfg = run.resolve(base_from_checkpoint(&checkpoint)?)?;
            let rows = commands::embed_to(&cfg, &checkpoint, &tsv)?;
            println!("wrote {rows} embeddings to {}", tsv.display());
        }
        Command::Selftest => {
            let checks = selftest::run_all()?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            for c in &checks {
                println!("{} {:<48} {:.3e} (bound {:.1e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.bound);
            }
            if failed > 0 {
                return Err(CliError::Numeric(format!("{failed} of {} self-test checks failed", checks.len())));
            }
            println!("all {} checks passed", checks.len());
        }
    }
    Ok(())
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
