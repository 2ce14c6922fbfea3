//! Graphs, disjoint-union minibatches, feature schemes and adjacency operators.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::CsrMatrix;

/// An undirected simple graph with a node feature matrix.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    graph_label: Option<usize>,
    node_labels: Option<Vec<usize>>,
}

impl Graph {
    /// Validates endpoints and feature rows. Reversed duplicates collapse into
    /// one undirected edge; self-loops are rejected.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, features: Matrix) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Graph {
            num_nodes,
            edges: canon,
            features,
            graph_label: None,
            node_labels: None,
        })
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    /// Degrees in the undirected simple graph.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }
}

/// Node feature construction schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureScheme {
    /// Keep the features that came with the dataset.
    Default,
    /// One column of ones.
    Constant,
    /// Indicator of node degree, `max_degree + 1` columns. `None` uses the
    /// largest degree present in the dataset.
    OneHotDegree { max_degree: Option<usize> },
}

/// Replaces node features of every graph according to `scheme`.
pub fn featurize(graphs: &[Graph], scheme: FeatureScheme) -> Result<Vec<Graph>> {
    match scheme {
        FeatureScheme::Default => {
            if let Some(i) = graphs.iter().position(|g| g.feature_dim() == 0 && g.num_nodes() > 0) {
                return Err(Error::InvalidArgument(format!(
                    "default feature scheme but graph {i} has no features"
                )));
            }
            Ok(graphs.to_vec())
        }
        FeatureScheme::Constant => graphs
            .iter()
            .map(|g| g.clone().with_features(Matrix::filled(g.num_nodes(), 1, 1.0)))
            .collect(),
        FeatureScheme::OneHotDegree { max_degree } => {
            let observed = graphs.iter().map(Graph::max_degree).max().unwrap_or(0);
            let cap = max_degree.unwrap_or(observed);
            if observed > cap {
                return Err(Error::InvalidArgument(format!(
                    "degree {observed} exceeds one-hot cap {cap}"
                )));
            }
            graphs
                .iter()
                .map(|g| {
                    let mut x = Matrix::zeros(g.num_nodes(), cap + 1);
                    for (n, d) in g.degrees().into_iter().enumerate() {
                        x.set(n, d, 1.0);
                    }
                    g.clone().with_features(x)
                })
                .collect()
        }
    }
}

/// Symmetric normalized adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`.
pub fn normalized_adjacency(graph: &Graph) -> CsrMatrix {
    let n = graph.num_nodes();
    let deg: Vec<f64> = graph.degrees().into_iter().map(|d| (d + 1) as f64).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / libm::sqrt(*d)).collect();
    let mut trip = Vec::with_capacity(2 * graph.num_edges() + n);
    for i in 0..n {
        trip.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    for &(u, v) in graph.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    CsrMatrix::from_triplets(n, n, &trip).expect("graph edges validated at construction")
}

/// 0/1 adjacency of the undirected expansion, optionally with self-loops.
pub fn raw_adjacency(graph: &Graph, self_loops: bool) -> CsrMatrix {
    let n = graph.num_nodes();
    let mut trip = Vec::with_capacity(2 * graph.num_edges() + n);
    if self_loops {
        trip.extend((0..n).map(|i| (i, i, 1.0)));
    }
    for &(u, v) in graph.edges() {
        trip.push((u, v, 1.0));
        trip.push((v, u, 1.0));
    }
    CsrMatrix::from_triplets(n, n, &trip).expect("graph edges validated at construction")
}

/// Several graphs packed as one block-diagonal graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    union: Graph,
    graph_ranges: Vec<Range<usize>>,
    graph_of_node: Vec<usize>,
    members: Vec<usize>,
    labels: Vec<Option<usize>>,
}

impl GraphBatch {
    /// Packs `graphs`; `members` records the dataset index of each graph.
    pub fn new(graphs: &[&Graph], members: Vec<usize>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if members.len() != graphs.len() {
            return Err(Error::InvalidArgument("one member index per graph required".into()));
        }
        let dim = graphs[0].feature_dim();
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != dim) {
            return Err(Error::InvalidGraph(format!(
                "feature width {} differs from {dim} within batch",
                g.feature_dim()
            )));
        }
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut data = Vec::with_capacity(total * dim);
        let mut edges = Vec::new();
        let mut graph_ranges = Vec::with_capacity(graphs.len());
        let mut graph_of_node = Vec::with_capacity(total);
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            data.extend_from_slice(g.features().as_slice());
            edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
            graph_ranges.push(offset..offset + g.num_nodes());
            graph_of_node.extend(core::iter::repeat_n(gi, g.num_nodes()));
            offset += g.num_nodes();
        }
        let union = Graph::new(total, edges, Matrix::from_vec(total, dim, data)?)?;
        Ok(GraphBatch {
            union,
            graph_ranges,
            graph_of_node,
            members,
            labels: graphs.iter().map(|g| g.graph_label()).collect(),
        })
    }

    pub fn from_graphs(graphs: &[Graph]) -> Result<Self> {
        let refs: Vec<&Graph> = graphs.iter().collect();
        Self::new(&refs, (0..graphs.len()).collect())
    }

    /// Number of graphs `N`.
    pub fn size(&self) -> usize {
        self.graph_ranges.len()
    }

    pub fn union(&self) -> &Graph {
        &self.union
    }

    pub fn graph_ranges(&self) -> &[Range<usize>] {
        &self.graph_ranges
    }

    pub fn graph_of_node(&self) -> &[usize] {
        &self.graph_of_node
    }

    /// Dataset indices of the packed graphs.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// `N × n` 0/1 operator summing each graph's node rows.
    pub fn pool_matrix(&self) -> CsrMatrix {
        let n = self.union.num_nodes();
        let offsets = self.graph_ranges.iter().map(|r| r.start).chain([n]).collect();
        CsrMatrix::try_new(self.size(), n, offsets, (0..n).collect(), vec![1.0; n])
            .expect("graph ranges partition the nodes")
    }

    /// Splits the union back into its member graphs.
    pub fn unbatch(&self) -> Vec<Graph> {
        let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.size()];
        for &(u, v) in self.union.edges() {
            let g = self.graph_of_node[u];
            let start = self.graph_ranges[g].start;
            edges[g].push((u - start, v - start));
        }
        self.graph_ranges
            .iter()
            .zip(edges)
            .zip(&self.labels)
            .map(|((range, e), label)| {
                let idx: Vec<usize> = range.clone().collect();
                let g = Graph::new(range.len(), e, self.union.features().select_rows(&idx))
                    .expect("member graphs are valid");
                match label {
                    Some(l) => g.with_graph_label(*l),
                    None => g,
                }
            })
            .collect()
    }
}

/// Shuffles graphs and packs them into batches of `batch_size`. A trailing
/// batch with fewer than two graphs is dropped since it carries no
/// contrastive signal.
pub fn make_batches<R: rand::Rng + ?Sized>(
    graphs: &[Graph],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<GraphBatch>> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("no graphs to batch".into()));
    }
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|chunk| {
            let refs: Vec<&Graph> = chunk.iter().map(|&i| &graphs[i]).collect();
            GraphBatch::new(&refs, chunk.to_vec())
        })
        .collect()
}

/// A graph (or packed batch) with every operator the encoders consume.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub features: Matrix,
    /// `D^-1/2 (A + I) D^-1/2`, for GCN.
    pub norm_adj: CsrMatrix,
    /// 0/1 adjacency without self-loops, for GIN.
    pub adj: CsrMatrix,
    /// 0/1 adjacency with self-loops, for GAT.
    pub adj_loops: CsrMatrix,
    /// Graph-sum operator when the input is a batch of graphs.
    pub pool: Option<CsrMatrix>,
}

impl PreparedGraph {
    pub fn from_graph(graph: &Graph) -> Self {
        PreparedGraph {
            features: graph.features().clone(),
            norm_adj: normalized_adjacency(graph),
            adj: raw_adjacency(graph, false),
            adj_loops: raw_adjacency(graph, true),
            pool: None,
        }
    }

    pub fn from_batch(batch: &GraphBatch) -> Self {
        PreparedGraph {
            pool: Some(batch.pool_matrix()),
            ..Self::from_graph(batch.union())
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}
