//! GCN, GIN and GAT encoders with optional global add pooling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::PreparedGraph;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Gcn,
    Gin,
    Gat,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gin => "gin",
            EncoderKind::Gat => "gat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gcn" => Some(EncoderKind::Gcn),
            "gin" => Some(EncoderKind::Gin),
            "gat" => Some(EncoderKind::Gat),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Node-level: one row per node.
    None,
    /// Graph-level: node rows summed per graph.
    GlobalAdd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Every weight set to the given value.
    Constant(f64),
}

/// Architecture of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub pooling: Pooling,
    pub init: Init,
    /// GIN self-weight `ε` in `(1 + ε)·h`, fixed.
    pub gin_eps: f64,
    /// GAT heads, averaged.
    pub gat_heads: usize,
    /// GAT leaky-relu negative slope.
    pub gat_slope: f64,
}

impl EncoderSpec {
    /// Graph-level defaults: 3 layers, global add pooling.
    pub fn graph_level(kind: EncoderKind, input_dim: usize, hidden_dim: usize) -> Self {
        EncoderSpec {
            kind,
            num_layers: 3,
            input_dim,
            hidden_dim,
            dropout: 0.5,
            pooling: Pooling::GlobalAdd,
            init: Init::Xavier,
            gin_eps: 0.0,
            gat_heads: 1,
            gat_slope: 0.2,
        }
    }

    /// Node-level defaults: 2 layers, no pooling.
    pub fn node_level(kind: EncoderKind, input_dim: usize, hidden_dim: usize) -> Self {
        EncoderSpec {
            num_layers: 2,
            pooling: Pooling::None,
            ..Self::graph_level(kind, input_dim, hidden_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder needs positive layers/dims, got L={} in={} hidden={}",
                self.num_layers, self.input_dim, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind == EncoderKind::Gat && self.gat_heads == 0 {
            return Err(Error::InvalidArgument("GAT needs at least one head".into()));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Names and shapes of the trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.hidden_dim;
        let mut out = Vec::new();
        for l in 0..self.num_layers {
            let fan_in = self.layer_input(l);
            match self.kind {
                EncoderKind::Gcn => out.push((format!("layer{l}.weight"), (fan_in, d))),
                EncoderKind::Gin => {
                    out.push((format!("layer{l}.mlp1"), (fan_in, d)));
                    out.push((format!("layer{l}.mlp2"), (d, d)));
                }
                EncoderKind::Gat => {
                    for h in 0..self.gat_heads {
                        out.push((format!("layer{l}.head{h}.weight"), (fan_in, d)));
                        out.push((format!("layer{l}.head{h}.attn"), (2, d)));
                    }
                }
            }
        }
        out
    }
}

/// Trainable tensors of one encoder, laid out as [`EncoderSpec::param_shapes`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub tensors: Vec<Matrix>,
}

impl EncoderParams {
    /// Checks that the tensors match `spec` and are finite.
    pub fn check(&self, spec: &EncoderSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tensors for a {} encoder expecting {}",
                self.tensors.len(),
                spec.kind.name(),
                shapes.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&self.tensors) {
            if *shape != t.shape() {
                return Err(Error::InvalidArgument(format!(
                    "{name}: stored {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("encoder parameter"));
            }
        }
        Ok(())
    }
}

pub fn init_params<R: rand::Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Result<EncoderParams> {
    spec.validate()?;
    let tensors = spec
        .param_shapes()
        .into_iter()
        .map(|(_, (r, c))| match spec.init {
            Init::Constant(v) => Matrix::filled(r, c, v),
            Init::Xavier => {
                let bound = libm::sqrt(6.0 / (r + c) as f64);
                let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
                Matrix::from_vec(r, c, data).expect("sized by construction")
            }
        })
        .collect();
    Ok(EncoderParams { tensors })
}

/// Records the encoder on `tape`. `params` are the tape handles of the
/// encoder's tensors in storage order. Returns node representations, or
/// pooled graph representations unless `spec.pooling` is `Pooling::None`.
pub fn forward<'a, R: rand::Rng + ?Sized>(
    tape: &mut Tape<'a>,
    spec: &EncoderSpec,
    params: &[Var],
    input: &'a PreparedGraph,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if input.features.cols() != spec.input_dim {
        return Err(Error::shape(
            "encoder input",
            input.features.shape(),
            (input.num_nodes(), spec.input_dim),
        ));
    }
    if params.len() != spec.param_shapes().len() {
        return Err(Error::InvalidArgument("parameter handles do not match spec".into()));
    }
    let mut h = tape.constant(input.features.clone());
    let last = spec.num_layers - 1;
    let mut p = params.iter().copied();
    for l in 0..spec.num_layers {
        h = tape.dropout(h, spec.dropout, training, rng)?;
        h = match spec.kind {
            EncoderKind::Gcn => {
                let w = p.next().unwrap();
                let hw = tape.matmul(h, w)?;
                let out = tape.spmm(&input.norm_adj, hw)?;
                if l < last {
                    tape.relu(out)?
                } else {
                    out
                }
            }
            EncoderKind::Gin => {
                let (w1, w2) = (p.next().unwrap(), p.next().unwrap());
                let neigh = tape.spmm(&input.adj, h)?;
                let own = if spec.gin_eps == 0.0 {
                    h
                } else {
                    tape.scale(h, 1.0 + spec.gin_eps)?
                };
                let agg = tape.add(neigh, own)?;
                let hidden = tape.matmul(agg, w1)?;
                let hidden = tape.relu(hidden)?;
                let out = tape.matmul(hidden, w2)?;
                if l < last {
                    tape.relu(out)?
                } else {
                    out
                }
            }
            EncoderKind::Gat => {
                let mut acc: Option<Var> = None;
                for _ in 0..spec.gat_heads {
                    let (w, a) = (p.next().unwrap(), p.next().unwrap());
                    let z = tape.matmul(h, w)?;
                    let scores = tape.matmul_nt(z, a)?;
                    let logits = tape.edge_scores(&input.adj_loops, scores)?;
                    let logits = tape.leaky_relu(logits, spec.gat_slope)?;
                    let alpha = tape.edge_softmax(&input.adj_loops, logits)?;
                    let head = tape.edge_aggregate(&input.adj_loops, alpha, z)?;
                    acc = Some(match acc {
                        Some(s) => tape.add(s, head)?,
                        None => head,
                    });
                }
                let mut out = acc.expect("at least one head");
                if spec.gat_heads > 1 {
                    out = tape.scale(out, 1.0 / spec.gat_heads as f64)?;
                }
                if l < last {
                    tape.elu(out)?
                } else {
                    out
                }
            }
        };
    }
    match spec.pooling {
        Pooling::None => Ok(h),
        Pooling::GlobalAdd => {
            let pool = input.pool.as_ref().ok_or_else(|| {
                Error::InvalidArgument("graph-level encoder given input without graph ranges".into())
            })?;
            global_add_pool(tape, h, pool)
        }
    }
}

/// Sums node rows per graph through the batch's pooling operator.
pub fn global_add_pool<'a>(tape: &mut Tape<'a>, node_reps: Var, pool: &'a crate::sparse::CsrMatrix) -> Result<Var> {
    tape.spmm(pool, node_reps)
}

/// Embeds `input` without recording gradients for later use.
pub fn encode<R: rand::Rng + ?Sized>(
    spec: &EncoderSpec,
    params: &EncoderParams,
    input: &PreparedGraph,
    training: bool,
    rng: &mut R,
) -> Result<Matrix> {
    params.check(spec)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward(&mut tape, spec, &vars, input, training, rng)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, GraphBatch};
    use crate::rng::{Purpose, RunSeed};
    use alloc::vec;

    fn rng() -> crate::rng::Rng {
        RunSeed(0).rng(Purpose::Init(0))
    }

    fn spec1(kind: EncoderKind, pooling: Pooling) -> EncoderSpec {
        EncoderSpec {
            num_layers: 1,
            dropout: 0.0,
            pooling,
            ..EncoderSpec::graph_level(kind, 1, 1)
        }
    }

    #[test]
    fn constant_init_is_exact() {
        let spec = EncoderSpec {
            init: Init::Constant(10.0),
            ..EncoderSpec::graph_level(EncoderKind::Gat, 7, 16)
        };
        let p = init_params(&spec, &mut rng()).unwrap();
        assert!(p.tensors.iter().all(|t| t.as_slice().iter().all(|&v| v == 10.0)));
    }

    #[test]
    fn xavier_bound_and_determinism() {
        let spec = EncoderSpec {
            num_layers: 1,
            ..EncoderSpec::graph_level(EncoderKind::Gcn, 4, 4)
        };
        let p = init_params(&spec, &mut rng()).unwrap();
        let bound = libm::sqrt(6.0 / 8.0);
        assert!(p.tensors[0].as_slice().iter().all(|v| v.abs() <= bound));
        assert_eq!(p, init_params(&spec, &mut rng()).unwrap());
    }

    #[test]
    fn gcn_single_node_identity() {
        let g = Graph::new(1, vec![], Matrix::scalar(2.5)).unwrap();
        let input = PreparedGraph::from_graph(&g);
        let spec = spec1(EncoderKind::Gcn, Pooling::None);
        let params = EncoderParams { tensors: vec![Matrix::identity(1)] };
        assert_eq!(encode(&spec, &params, &input, false, &mut rng()).unwrap(), Matrix::scalar(2.5));
    }

    #[test]
    fn gcn_two_node_path() {
        let g = Graph::new(2, vec![(0, 1)], Matrix::filled(2, 1, 1.0)).unwrap();
        let input = PreparedGraph::from_graph(&g);
        let spec = spec1(EncoderKind::Gcn, Pooling::None);
        let params = EncoderParams { tensors: vec![Matrix::identity(1)] };
        let out = encode(&spec, &params, &input, false, &mut rng()).unwrap();
        assert!(out.max_abs_diff(&Matrix::filled(2, 1, 1.0)) < 1e-15);
    }

    #[test]
    fn gin_sums_neighbourhood() {
        let g = Graph::new(2, vec![(0, 1)], Matrix::from_rows(&[[1.0], [2.0]])).unwrap();
        let input = PreparedGraph::from_graph(&g);
        let spec = spec1(EncoderKind::Gin, Pooling::None);
        let params = EncoderParams { tensors: vec![Matrix::identity(1), Matrix::identity(1)] };
        let out = encode(&spec, &params, &input, false, &mut rng()).unwrap();
        assert_eq!(out, Matrix::filled(2, 1, 3.0));

        let iso = Graph::new(1, vec![], Matrix::scalar(4.0)).unwrap();
        let out = encode(&spec, &params, &PreparedGraph::from_graph(&iso), false, &mut rng()).unwrap();
        assert_eq!(out, Matrix::scalar(4.0));
    }

    #[test]
    fn gat_single_node_is_linear() {
        let g = Graph::new(1, vec![], Matrix::from_rows(&[[1.0, -2.0]])).unwrap();
        let input = PreparedGraph::from_graph(&g);
        let spec = EncoderSpec {
            input_dim: 2,
            hidden_dim: 3,
            ..spec1(EncoderKind::Gat, Pooling::None)
        };
        let params = init_params(&spec, &mut rng()).unwrap();
        let out = encode(&spec, &params, &input, false, &mut rng()).unwrap();
        let expect = g.features().matmul(&params.tensors[0]).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn gat_attention_rows_sum_to_one() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)], Matrix::from_rows(&[[0.3], [-1.0], [2.0], [0.7]]))
            .unwrap();
        let input = PreparedGraph::from_graph(&g);
        let mut t = Tape::new();
        let z = t.constant(input.features.clone());
        let a = t.constant(Matrix::from_rows(&[[0.8], [-0.4]]));
        let scores = t.matmul_nt(z, a).unwrap();
        let logits = t.edge_scores(&input.adj_loops, scores).unwrap();
        let alpha = t.edge_softmax(&input.adj_loops, logits).unwrap();
        let alpha = t.value(alpha);
        for u in 0..4 {
            let s: f64 = alpha.as_slice()[input.adj_loops.row_range(u)].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_sums_rows() {
        let g = Graph::new(2, vec![], Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let batch = GraphBatch::from_graphs(&[g]).unwrap();
        let pool = batch.pool_matrix();
        let mut t = Tape::new();
        let h = t.constant(batch.union().features().clone());
        let out = global_add_pool(&mut t, h, &pool).unwrap();
        assert_eq!(t.value(out), &Matrix::from_rows(&[[4.0, 6.0]]));

        let singles: Vec<Graph> = (0..2)
            .map(|i| Graph::new(1, vec![], Matrix::from_rows(&[[i as f64, 1.0]])).unwrap())
            .collect();
        let batch = GraphBatch::from_graphs(&singles).unwrap();
        let pool = batch.pool_matrix();
        let h = t.constant(batch.union().features().clone());
        let out = global_add_pool(&mut t, h, &pool).unwrap();
        assert_eq!(t.value(out), batch.union().features());
    }

    #[test]
    fn input_width_is_checked() {
        let g = Graph::new(1, vec![], Matrix::zeros(1, 3)).unwrap();
        let spec = spec1(EncoderKind::Gcn, Pooling::None);
        let params = init_params(&spec, &mut rng()).unwrap();
        assert!(matches!(
            encode(&spec, &params, &PreparedGraph::from_graph(&g), false, &mut rng()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn pooling_spec_requires_batch_input() {
        let g = Graph::new(1, vec![], Matrix::zeros(1, 1)).unwrap();
        let spec = spec1(EncoderKind::Gcn, Pooling::GlobalAdd);
        let params = init_params(&spec, &mut rng()).unwrap();
        assert!(encode(&spec, &params, &PreparedGraph::from_graph(&g), false, &mut rng()).is_err());
    }
}
