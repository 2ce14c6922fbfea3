//! Loading datasets as a run configuration describes them.

use cgcl_core::graph::{featurize, Graph};
use cgcl_core::trainer::TrainMode;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::interchange::load_node_dataset;
use crate::tudataset::load_tudataset;

/// A loaded, featurized dataset.
#[derive(Clone, Debug)]
pub enum Dataset {
    Graphs(Vec<Graph>),
    Nodes(Graph),
}

impl Dataset {
    pub fn mode(&self) -> TrainMode {
        match self {
            Dataset::Graphs(_) => TrainMode::GraphLevel,
            Dataset::Nodes(_) => TrainMode::NodeLevel,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Graphs(g) => g.first().map_or(0, Graph::feature_dim),
            Dataset::Nodes(g) => g.feature_dim(),
        }
    }

    /// Graphs or nodes.
    pub fn len(&self) -> usize {
        match self {
            Dataset::Graphs(g) => g.len(),
            Dataset::Nodes(g) => g.num_nodes(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loads `cfg.data`: a TUDataset directory with files named after
/// `cfg.dataset` in graph mode, an interchange directory in node mode.
pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    if !cfg.data.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", cfg.data.display())));
    }
    match cfg.train.mode {
        TrainMode::GraphLevel => {
            let name = tu_prefix(cfg)?;
            let graphs = load_tudataset(&cfg.data, &name)?;
            Ok(Dataset::Graphs(featurize(&graphs, cfg.features)?))
        }
        TrainMode::NodeLevel => {
            let g = load_node_dataset(&cfg.data)?;
            let mut out = featurize(std::slice::from_ref(&g), cfg.features)?;
            Ok(Dataset::Nodes(out.pop().expect("one graph in, one out")))
        }
    }
}

/// The `NAME` of `NAME_A.txt`: the dataset name if such a file exists, else
/// the single `*_A.txt` prefix found in the directory.
fn tu_prefix(cfg: &RunConfig) -> Result<String> {
    if cfg.data.join(format!("{}_A.txt", cfg.dataset)).is_file() {
        return Ok(cfg.dataset.clone());
    }
    let entries = std::fs::read_dir(&cfg.data).map_err(|e| CliError::io(&cfg.data, e))?;
    let prefixes: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_A.txt")).map(str::to_string))
        .collect();
    match prefixes.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(CliError::Data(format!("no *_A.txt file in {}", cfg.data.display()))),
        _ => Err(CliError::Data(format!(
            "several datasets in {}; choose one with --dataset",
            cfg.data.display()
        ))),
    }
}

/// The mode a directory's layout implies: `meta.tsv` marks node-level data.
pub fn detect_mode(dir: &std::path::Path) -> TrainMode {
    if dir.join("meta.tsv").is_file() {
        TrainMode::NodeLevel
    } else {
        TrainMode::GraphLevel
    }
}
