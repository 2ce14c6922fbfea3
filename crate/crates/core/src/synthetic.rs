//! Seeded synthetic datasets for tests and smoke runs.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::Result;
use crate::graph::{featurize, FeatureScheme, Graph};
use crate::matrix::Matrix;
use crate::rng::{Purpose, RunSeed};

/// Two structural classes of small graphs: class 0 are rings with a few
/// chords, class 1 are random trees with the same number of nodes and
/// edges added until the edge count matches a class-0 graph of that size.
/// Node features are one-hot degrees capped at `max_degree`, so the classes
/// differ only in how edges are arranged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingsVsTrees {
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Extra chords per ring.
    pub chords: usize,
    pub max_degree: usize,
}

impl Default for RingsVsTrees {
    fn default() -> Self {
        RingsVsTrees {
            count: 300,
            min_nodes: 8,
            max_nodes: 16,
            chords: 5,
            max_degree: 6,
        }
    }
}

impl RingsVsTrees {
    /// Graphs alternate between the classes; labels are balanced.
    pub fn generate(&self, seed: u64) -> Result<Vec<Graph>> {
        let mut rng = RunSeed(seed).rng(Purpose::Synthetic(0));
        let mut graphs = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let n = rng.random_range(self.min_nodes..=self.max_nodes);
            let mut edges: Vec<(usize, usize)> = Vec::new();
            let label = i % 2;
            if label == 0 {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                for j in 0..n {
                    edges.push((order[j], order[(j + 1) % n]));
                }
            } else {
                for v in 1..n {
                    edges.push((rng.random_range(0..v), v));
                }
            }
            let target = n + self.chords;
            let mut guard = 0;
            while dedup_len(&edges) < target && guard < 1000 {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n);
                if u != v {
                    edges.push((u, v));
                }
                guard += 1;
            }
            let g = Graph::new(n, edges, Matrix::zeros(n, 0))?.with_graph_label(label);
            graphs.push(cap_degree(g, self.max_degree)?);
        }
        featurize(
            &graphs,
            FeatureScheme::OneHotDegree {
                max_degree: Some(self.max_degree),
            },
        )
    }
}

fn dedup_len(edges: &[(usize, usize)]) -> usize {
    let mut e: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    e.sort_unstable();
    e.dedup();
    e.len()
}

/// Drops edges touching nodes whose degree exceeds `cap`, last edges first.
fn cap_degree(g: Graph, cap: usize) -> Result<Graph> {
    let n = g.num_nodes();
    let mut deg = alloc::vec![0usize; n];
    let mut kept = Vec::new();
    for &(u, v) in g.edges() {
        if deg[u] < cap && deg[v] < cap {
            deg[u] += 1;
            deg[v] += 1;
            kept.push((u, v));
        }
    }
    let label = g.graph_label();
    let mut out = Graph::new(n, kept, g.features().clone())?;
    if let Some(l) = label {
        out = out.with_graph_label(l);
    }
    Ok(out)
}

/// A planted-partition graph: `classes` equal communities, edges inside a
/// community with probability `p_in` and across with `p_out`, and sparse
/// binary features where each class prefers its own block of `dim` columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    /// Active features per node.
    pub active: usize,
    /// Probability that an active feature is drawn from the node's own block.
    pub signal: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            nodes: 60,
            classes: 3,
            p_in: 0.2,
            p_out: 0.01,
            dim: 30,
            active: 4,
            signal: 0.6,
        }
    }
}

impl PlantedPartition {
    pub fn generate(&self, seed: u64) -> Result<Graph> {
        let mut rng = RunSeed(seed).rng(Purpose::Synthetic(1));
        let labels: Vec<usize> = (0..self.nodes).map(|i| i % self.classes).collect();
        let mut edges = Vec::new();
        for u in 0..self.nodes {
            for v in u + 1..self.nodes {
                let p = if labels[u] == labels[v] { self.p_in } else { self.p_out };
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let block = (self.dim / self.classes).max(1);
        let mut x = Matrix::zeros(self.nodes, self.dim);
        for (u, &c) in labels.iter().enumerate() {
            for _ in 0..self.active {
                let col = if rng.random_bool(self.signal) {
                    (c * block + rng.random_range(0..block)).min(self.dim - 1)
                } else {
                    rng.random_range(0..self.dim)
                };
                x.set(u, col, 1.0);
            }
        }
        Graph::new(self.nodes, edges, x)?.with_node_labels(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rings_vs_trees_is_balanced_and_seeded() {
        let cfg = RingsVsTrees {
            count: 20,
            ..Default::default()
        };
        let a = cfg.generate(1).unwrap();
        let b = cfg.generate(1).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.iter().filter(|g| g.graph_label() == Some(1)).count(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.edges(), y.edges());
        }
        assert!(a.iter().all(|g| g.feature_dim() == 7 && g.max_degree() <= 6));
    }

    #[test]
    fn planted_partition_shapes() {
        let g = PlantedPartition::default().generate(3).unwrap();
        assert_eq!(g.num_nodes(), 60);
        assert_eq!(g.feature_dim(), 30);
        assert_eq!(g.node_labels().unwrap()[4], 1);
        assert!(g.num_edges() > 0);
    }
}
