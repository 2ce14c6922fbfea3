//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node; [`Var`] is a handle to a node.
//! Inputs are always recorded before the operations that consume them, so the
//! node order is a topological order and [`Tape::backward`] is a single reverse
//! sweep. Sparse operators (adjacency, pooling) are borrowed for the lifetime
//! of the tape and are never differentiated.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::sparse::CsrMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Above this many score entries the InfoNCE node recomputes similarity rows
/// during backward instead of caching the full softmax matrix.
const INFO_NCE_CACHE_LIMIT: usize = 1 << 24;

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SpMm(&'a CsrMatrix, Var),
    Add(Var, Var),
    AddScalar(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Trace(Var),
    RowLogSoftmax(Var),
    RowNormalize(Var),
    EdgeScores(&'a CsrMatrix, Var),
    EdgeSoftmax(&'a CsrMatrix, Var),
    EdgeAggregate(&'a CsrMatrix, Var, Var),
    InfoNce {
        query: Var,
        key: Var,
        inv_tau: f64,
        lse: Vec<f64>,
        probs: Option<Matrix>,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::SpMm(..) => "spmm",
            Op::Add(..) => "add",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Elu(..) => "elu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Dropout(..) => "dropout",
            Op::Sum(..) => "sum",
            Op::Trace(..) => "trace",
            Op::RowLogSoftmax(..) => "row_log_softmax",
            Op::RowNormalize(..) => "row_normalize",
            Op::EdgeScores(..) => "edge_scores",
            Op::EdgeSoftmax(..) => "edge_softmax",
            Op::EdgeAggregate(..) => "edge_aggregate",
            Op::InfoNce { .. } => "info_nce",
        }
    }
}

struct Node<'a> {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op<'a>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Log-sum-exp of a row with max subtraction.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(s)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a trainable input whose gradient is collected by `backward`.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A gradient-blocking copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last `backward`, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when `v` was not reachable from the loss.
    pub fn grad_or_zeros(&self, v: Var) -> Matrix {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op<'a>, value: Matrix, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        gemm_nn(av, bv, &mut out);
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        gemm_nt(av, bv, &mut out);
        self.push(Op::MatMulNt(a, b), out, &[a, b])
    }

    /// Sparse-dense product `adj · x`; `adj` is a constant.
    pub fn spmm(&mut self, adj: &'a CsrMatrix, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if adj.cols() != xv.rows() {
            return Err(Error::shape("spmm", adj.shape(), xv.shape()));
        }
        if adj.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                op: "spmm",
                detail: "non-finite adjacency value".into(),
            });
        }
        let mut out = Matrix::zeros(adj.rows(), xv.cols());
        adj.spmm_into(xv, &mut out);
        self.push(Op::SpMm(adj, x), out, &[x])
    }

    /// Elementwise sum; `b` may also be a 1×1 scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape() == (1, 1) && av.shape() != (1, 1) {
            let s = bv.get(0, 0);
            let out = av.map(|x| x + s);
            return self.push(Op::AddScalar(a, b), out, &[a, b]);
        }
        same_shape("add", av, bv)?;
        let mut out = av.clone();
        out.axpy(1.0, bv);
        self.push(Op::Add(a, b), out, &[a, b])
    }

    /// Adds a `1×d` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::shape("add_row", av.shape(), rv.shape()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            axpy(1.0, rv.as_slice(), out.row_mut(r));
        }
        self.push(Op::AddRow(a, row), out, &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out, &[a])
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { libm::expm1(x) });
        self.push(Op::Elu(a), out, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(libm::exp);
        self.push(Op::Exp(a), out, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(bad) = av.as_slice().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: alloc::format!("non-positive input {bad}"),
            });
        }
        let out = av.map(libm::log);
        self.push(Op::Log(a), out, &[a])
    }

    /// Inverted dropout. Survivors are scaled by `1/(1-p)`; outside training
    /// the input handle itself is returned.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(alloc::format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let av = self.value(a);
        let mask: Vec<f64> = (0..av.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = av.as_slice().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        self.push(Op::Dropout(a, mask), out, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Matrix::scalar(s), &[a])
    }

    /// Sum of the diagonal of a square matrix.
    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::shape("trace", av.shape(), (av.cols(), av.rows())));
        }
        let s = (0..av.rows()).map(|i| av.get(i, i)).sum();
        self.push(Op::Trace(a), Matrix::scalar(s), &[a])
    }

    /// `out[r, c] = a[r, c] - log Σ_j exp(a[r, j])`, stabilized by the row max.
    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_finite() {
            return Err(Error::NonFinite("row_log_softmax input"));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(Op::RowLogSoftmax(a), out, &[a])
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let norm = libm::sqrt(dot(row, row)).max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.push(Op::RowNormalize(a), out, &[a])
    }

    /// Attention logits per stored edge: for entry `(u, v)` of `adj`,
    /// `scores[u, 0] + scores[v, 1]`. Output is `nnz × 1`.
    pub fn edge_scores(&mut self, adj: &'a CsrMatrix, scores: Var) -> Result<Var> {
        let sv = self.value(scores);
        if sv.cols() != 2 || sv.rows() != adj.rows() || adj.rows() != adj.cols() {
            return Err(Error::shape("edge_scores", adj.shape(), sv.shape()));
        }
        let mut out = Vec::with_capacity(adj.nnz());
        for u in 0..adj.rows() {
            for k in adj.row_range(u) {
                out.push(sv.get(u, 0) + sv.get(adj.indices()[k], 1));
            }
        }
        let out = Matrix::from_vec(adj.nnz(), 1, out)?;
        self.push(Op::EdgeScores(adj, scores), out, &[scores])
    }

    /// Softmax of per-edge logits over each row's stored entries.
    pub fn edge_softmax(&mut self, adj: &'a CsrMatrix, logits: Var) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != (adj.nnz(), 1) {
            return Err(Error::shape("edge_softmax", (adj.nnz(), 1), lv.shape()));
        }
        let mut out = lv.clone();
        for u in 0..adj.rows() {
            let seg = &mut out.as_mut_slice()[adj.row_range(u)];
            if seg.is_empty() {
                continue;
            }
            let lse = log_sum_exp(seg);
            seg.iter_mut().for_each(|v| *v = libm::exp(*v - lse));
        }
        self.push(Op::EdgeSoftmax(adj, logits), out, &[logits])
    }

    /// `out[u] = Σ_k weights[k] · x[col_k]` over the stored entries of row `u`.
    pub fn edge_aggregate(&mut self, adj: &'a CsrMatrix, weights: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(weights), self.value(x));
        if wv.shape() != (adj.nnz(), 1) || adj.cols() != xv.rows() {
            return Err(Error::shape("edge_aggregate", adj.shape(), xv.shape()));
        }
        let mut out = Matrix::zeros(adj.rows(), xv.cols());
        for u in 0..adj.rows() {
            let orow = out.row_mut(u);
            for k in adj.row_range(u) {
                axpy(wv.as_slice()[k], xv.row(adj.indices()[k]), orow);
            }
        }
        self.push(Op::EdgeAggregate(adj, weights, x), out, &[weights, x])
    }

    /// Fused InfoNCE between row-aligned query and key embeddings:
    /// `Σ_i [log Σ_j exp(s_ij) - s_ii]` with `s = query · keyᵀ / τ`.
    ///
    /// Rows of the score matrix are produced one at a time with the same
    /// max-subtracted log-sum-exp as [`Tape::row_log_softmax`], so memory stays
    /// linear in the number of rows unless the softmax fits the cache limit.
    pub fn info_nce(&mut self, query: Var, key: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let (qv, kv) = (self.value(query), self.value(key));
        same_shape("info_nce", qv, kv)?;
        let n = qv.rows();
        if n == 0 {
            return Err(Error::InvalidArgument("info_nce needs at least one row".into()));
        }
        let inv_tau = 1.0 / temperature;
        let cache = n * n <= INFO_NCE_CACHE_LIMIT;
        let mut probs = if cache { Some(Matrix::zeros(n, n)) } else { None };
        let mut lse = Vec::with_capacity(n);
        let mut row = vec![0.0; n];
        let mut loss = 0.0;
        for i in 0..n {
            let q = qv.row(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(q, kv.row(j)) * inv_tau;
            }
            let l = log_sum_exp(&row);
            loss += l - row[i];
            if let Some(p) = probs.as_mut() {
                for (pj, s) in p.row_mut(i).iter_mut().zip(&row) {
                    *pj = libm::exp(s - l);
                }
            }
            lse.push(l);
        }
        let op = Op::InfoNce {
            query,
            key,
            inv_tau,
            lse,
            probs,
        };
        self.push(op, Matrix::scalar(loss), &[query, key])
    }

    /// Mean cross-entropy of `logits` against integer class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if labels.len() != n || n == 0 {
            return Err(Error::shape("cross_entropy", (n, c), (labels.len(), 1)));
        }
        let mut onehot = Matrix::zeros(n, c);
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidArgument(alloc::format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            onehot.set(i, y, 1.0);
        }
        let logp = self.row_log_softmax(logits)?;
        let mask = self.constant(onehot);
        let picked = self.mul(logp, mask)?;
        let total = self.sum(picked)?;
        self.scale(total, -1.0 / n as f64)
    }

    /// Reverse sweep from the scalar `loss`, accumulating gradients into every
    /// node that requires them. Nodes recorded after `loss` are untouched.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", self.shape(loss), (1, 1)));
        }
        self.zero_grad();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, contrib) in contributions {
                assert!(v.0 < i, "tape is not topologically ordered");
                if !contrib.is_finite() {
                    return Err(Error::NonFinite(self.nodes[i].op.name()));
                }
                let node = &mut self.nodes[v.0];
                match node.grad.as_mut() {
                    Some(acc) => acc.axpy(1.0, &contrib),
                    None => node.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm_nt(g, bv, &mut ga);
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm_tn(av, g, &mut gb);
                    res.push((*b, gb));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    gemm_nn(g, bv, &mut ga);
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    gemm_tn(g, av, &mut gb);
                    res.push((*b, gb));
                }
            }
            Op::SpMm(adj, x) => {
                if self.wants(*x) {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    adj.spmm_t_into(g, &mut gx);
                    res.push((*x, gx));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        res.push((v, g.clone()));
                    }
                }
            }
            Op::AddScalar(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    res.push((*b, Matrix::scalar(g.sum())));
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    res.push((*a, g.clone()));
                }
                if self.wants(*row) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        axpy(1.0, g.row(r), gr.as_mut_slice());
                    }
                    res.push((*row, gr));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, hadamard(g, self.value(*b))));
                }
                if self.wants(*b) {
                    res.push((*b, hadamard(g, self.value(*a))));
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    res.push((*a, g.map(|x| c * x)));
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    res.push((*a, zip_map(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })));
                }
            }
            Op::Elu(a) => {
                if self.wants(*a) {
                    let ga = zip_map(g, out, |g, y| if y > 0.0 { g } else { g * (y + 1.0) });
                    res.push((*a, ga));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.wants(*a) {
                    let s = *slope;
                    res.push((*a, zip_map(g, self.value(*a), |g, x| if x > 0.0 { g } else { s * g })));
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    res.push((*a, hadamard(g, out)));
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    res.push((*a, zip_map(g, self.value(*a), |g, x| g / x)));
                }
            }
            Op::Dropout(a, mask) => {
                if self.wants(*a) {
                    let data = g.as_slice().iter().zip(mask).map(|(g, m)| g * m).collect();
                    res.push((*a, Matrix::from_vec(g.rows(), g.cols(), data)?));
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.shape(*a);
                    res.push((*a, Matrix::filled(r, c, g.get(0, 0))));
                }
            }
            Op::Trace(a) => {
                if self.wants(*a) {
                    let n = self.shape(*a).0;
                    let mut ga = Matrix::zeros(n, n);
                    for d in 0..n {
                        ga.set(d, d, g.get(0, 0));
                    }
                    res.push((*a, ga));
                }
            }
            Op::RowLogSoftmax(a) => {
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (gv, y) in ga.row_mut(r).iter_mut().zip(out.row(r)) {
                            *gv -= libm::exp(*y) * gsum;
                        }
                    }
                    res.push((*a, ga));
                }
            }
            Op::RowNormalize(a) => {
                if self.wants(*a) {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let norm = libm::sqrt(dot(av.row(r), av.row(r))).max(1e-12);
                        let y = out.row(r);
                        let proj = dot(y, g.row(r));
                        for ((gv, &gr), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y) {
                            *gv = (gr - yv * proj) / norm;
                        }
                    }
                    res.push((*a, ga));
                }
            }
            Op::EdgeScores(adj, s) => {
                if self.wants(*s) {
                    let mut gs = Matrix::zeros(adj.rows(), 2);
                    for u in 0..adj.rows() {
                        for k in adj.row_range(u) {
                            let gk = g.as_slice()[k];
                            let v = adj.indices()[k];
                            gs.set(u, 0, gs.get(u, 0) + gk);
                            gs.set(v, 1, gs.get(v, 1) + gk);
                        }
                    }
                    res.push((*s, gs));
                }
            }
            Op::EdgeSoftmax(adj, logits) => {
                if self.wants(*logits) {
                    let mut gl = Matrix::zeros(adj.nnz(), 1);
                    for u in 0..adj.rows() {
                        let range = adj.row_range(u);
                        let alpha = &out.as_slice()[range.clone()];
                        let gseg = &g.as_slice()[range.clone()];
                        let inner = dot(alpha, gseg);
                        for ((o, a), gv) in gl.as_mut_slice()[range].iter_mut().zip(alpha).zip(gseg) {
                            *o = a * (gv - inner);
                        }
                    }
                    res.push((*logits, gl));
                }
            }
            Op::EdgeAggregate(adj, w, x) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                if self.wants(*w) {
                    let mut gw = Matrix::zeros(adj.nnz(), 1);
                    for u in 0..adj.rows() {
                        for k in adj.row_range(u) {
                            gw.as_mut_slice()[k] = dot(g.row(u), xv.row(adj.indices()[k]));
                        }
                    }
                    res.push((*w, gw));
                }
                if self.wants(*x) {
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for u in 0..adj.rows() {
                        for k in adj.row_range(u) {
                            axpy(wv.as_slice()[k], g.row(u), gx.row_mut(adj.indices()[k]));
                        }
                    }
                    res.push((*x, gx));
                }
            }
            Op::InfoNce {
                query,
                key,
                inv_tau,
                lse,
                probs,
            } => {
                let (qv, kv) = (self.value(*query), self.value(*key));
                let (want_q, want_k) = (self.wants(*query), self.wants(*key));
                if !(want_q || want_k) {
                    return Ok(res);
                }
                let n = qv.rows();
                let factor = g.get(0, 0) * inv_tau;
                // d loss / d s_ij = P_ij - δ_ij, computed one row at a time.
                let mut gq = Matrix::zeros(n, qv.cols());
                let mut gk = Matrix::zeros(n, kv.cols());
                let mut row = vec![0.0; n];
                for i in 0..n {
                    match probs {
                        Some(p) => row.copy_from_slice(p.row(i)),
                        None => {
                            let q = qv.row(i);
                            for (j, s) in row.iter_mut().enumerate() {
                                *s = libm::exp(dot(q, kv.row(j)) * inv_tau - lse[i]);
                            }
                        }
                    }
                    row[i] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= factor);
                    if want_q {
                        let gqi = gq.row_mut(i);
                        for (j, &d) in row.iter().enumerate() {
                            axpy(d, kv.row(j), gqi);
                        }
                    }
                    if want_k {
                        let q = qv.row(i);
                        for (j, &d) in row.iter().enumerate() {
                            axpy(d, q, gk.row_mut(j));
                        }
                    }
                }
                if want_q {
                    res.push((*query, gq));
                }
                if want_k {
                    res.push((*key, gk));
                }
            }
        }
        Ok(res)
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shapes checked at record time")
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}
