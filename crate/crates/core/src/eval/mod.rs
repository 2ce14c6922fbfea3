//! Downstream evaluation of learned representations.

mod finetune;
mod linear;
mod node;
mod svm;

pub use finetune::{finetune, FinetuneConfig, FinetuneResult};
pub use linear::{linear_probe_graph, linear_probe_run, stratified_folds, LinearProbeConfig, C_GRID};
pub use node::{make_node_split, node_probe, NodeProbeConfig, NodeSplit};
pub use svm::{LinearSvm, Standardizer};

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::{encode, EncoderParams, EncoderSpec, Pooling};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch, PreparedGraph};
use crate::matrix::Matrix;
use crate::rng::{Purpose, RunSeed};

/// Representations of a dataset's items, with their ids and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub matrix: Matrix,
    pub ids: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(matrix: Matrix, ids: Vec<usize>, labels: Option<Vec<usize>>) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != matrix.rows() {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} embedding rows",
                    l.len(),
                    matrix.rows()
                )));
            }
        }
        Ok(EmbeddingSet { matrix, ids, labels })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("embeddings carry no labels".into()))
    }
}

/// Graphs packed per evaluation forward pass. Batching has no numerical
/// effect on pooled embeddings; this only bounds memory.
pub const EMBED_BATCH: usize = 256;

/// Pooled eval-mode embeddings of every graph, in dataset order.
pub fn embed_graphs(spec: &EncoderSpec, params: &EncoderParams, graphs: &[Graph]) -> Result<EmbeddingSet> {
    if spec.pooling != Pooling::GlobalAdd {
        return Err(Error::InvalidArgument("graph embeddings need a pooling encoder".into()));
    }
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("no graphs to embed".into()));
    }
    // Eval mode draws no random numbers; the generator is only a formality.
    let mut rng = RunSeed(0).rng(Purpose::Epoch(0));
    let mut parts = Vec::new();
    for (c, chunk) in graphs.chunks(EMBED_BATCH).enumerate() {
        let refs: Vec<&Graph> = chunk.iter().collect();
        let start = c * EMBED_BATCH;
        let batch = GraphBatch::new(&refs, (start..start + chunk.len()).collect())?;
        parts.push(encode(spec, params, &PreparedGraph::from_batch(&batch), false, &mut rng)?);
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    let labels: Option<Vec<usize>> = graphs.iter().map(|g| g.graph_label()).collect();
    EmbeddingSet::new(Matrix::vstack(&refs)?, (0..graphs.len()).collect(), labels)
}

/// Eval-mode node embeddings of one graph.
pub fn embed_nodes(spec: &EncoderSpec, params: &EncoderParams, graph: &Graph) -> Result<EmbeddingSet> {
    if spec.pooling != Pooling::None {
        return Err(Error::InvalidArgument("node embeddings need a non-pooling encoder".into()));
    }
    let mut rng = RunSeed(0).rng(Purpose::Epoch(0));
    let m = encode(spec, params, &PreparedGraph::from_graph(graph), false, &mut rng)?;
    EmbeddingSet::new(
        m,
        (0..graph.num_nodes()).collect(),
        graph.node_labels().map(|l| l.to_vec()),
    )
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Index of the largest entry of each row; ties go to the lower index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean and sample standard deviation of repeated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<(u64, f64)>,
}

impl RunStats {
    pub fn from_runs(runs: Vec<(u64, f64)>) -> Self {
        let n = runs.len();
        // Offsets from the first run keep constant inputs exact.
        let base = runs.first().map_or(0.0, |r| r.1);
        let mean = if n == 0 { 0.0 } else { base + runs.iter().map(|r| r.1 - base).sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = runs.iter().map(|r| (r.1 - mean) * (r.1 - mean)).sum();
            libm::sqrt(ss / (n - 1) as f64)
        };
        RunStats { mean, std, runs }
    }
}

/// Runs `protocol` once per seed.
pub fn repeat_runs<F>(seeds: &[u64], mut protocol: F) -> Result<RunStats>
where
    F: FnMut(u64) -> Result<f64>,
{
    let runs = seeds
        .iter()
        .map(|&s| protocol(s).map(|a| (s, a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunStats::from_runs(runs))
}

/// Number of distinct classes, i.e. one past the largest label.
pub(crate) fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_statistics() {
        let s = repeat_runs(&[1, 2, 3], |_| Ok(0.7)).unwrap();
        assert_eq!((s.mean, s.std), (0.7, 0.0));
        assert_eq!(s.runs.len(), 3);
        let s = RunStats::from_runs(alloc::vec![(1, 0.8), (2, 0.9)]);
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.std - 0.070710678118654).abs() < 1e-12);
    }

    #[test]
    fn argmax_and_accuracy() {
        let m = Matrix::from_rows(&[[0.1, 0.9], [2.0, 2.0], [-1.0, -3.0]]);
        assert_eq!(argmax_rows(&m), [1, 0, 0]);
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 0]), 2.0 / 3.0);
    }
}
