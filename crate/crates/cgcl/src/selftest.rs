//! Numerical self-checks: finite-difference gradients, loss oracles,
//! closed-form loss values and structural invariances of the encoders.

use cgcl_core::autodiff::{Tape, Var};
use cgcl_core::contrastive::{info_nce_value, loss_forms};
use cgcl_core::encoder::{encode, forward, init_params, EncoderKind, EncoderSpec, Pooling};
use cgcl_core::gradcheck::check_gradients;
use cgcl_core::graph::{Graph, GraphBatch, PreparedGraph};
use cgcl_core::rng::{Purpose, Rng, RunSeed};
use cgcl_core::{Matrix, Result};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub const KINDS: [EncoderKind; 3] = [EncoderKind::Gcn, EncoderKind::Gin, EncoderKind::Gat];

/// One measured quantity and the bound it must respect.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value < bound`.
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            pass: value < bound,
        }
    }

    /// Passes when `value == expected` exactly.
    pub fn exactly(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound: expected,
            pass: value == expected,
        }
    }
}

fn rng(stream: usize) -> Rng {
    RunSeed(20240917).rng(Purpose::Synthetic(100 + stream))
}

fn uniform(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// A connected random graph: a random spanning tree plus extra edges.
pub fn random_graph(nodes: usize, dim: usize, extra: usize, rng: &mut Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..nodes).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..extra {
        let (u, v) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if u != v {
            edges.push((u, v));
        }
    }
    Graph::new(nodes, edges, uniform(nodes, dim, rng)).expect("valid by construction")
}

/// Relabels node `i` as `perm[i]`.
pub fn permute(g: &Graph, perm: &[usize]) -> Graph {
    let edges = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let mut x = Matrix::zeros(g.num_nodes(), g.feature_dim());
    for (i, &p) in perm.iter().enumerate() {
        x.row_mut(p).copy_from_slice(g.features().row(i));
    }
    Graph::new(g.num_nodes(), edges, x).expect("permutation of a valid graph")
}

fn test_spec(kind: EncoderKind, input: usize, pooling: Pooling) -> EncoderSpec {
    EncoderSpec {
        num_layers: 2,
        dropout: 0.0,
        pooling,
        ..EncoderSpec::graph_level(kind, input, 4)
    }
}

/// Finite-difference gradient checks of every encoder, of encoder pairs under
/// the contrastive loss, and of the individual differentiable operations, on
/// a 6-node random graph with inputs in [-1, 1].
pub fn gradient_checks() -> Result<Vec<Check>> {
    const EPS: f64 = 1e-5;
    const BOUND: f64 = 1e-4;
    let mut r = rng(0);
    let g = random_graph(6, 3, 3, &mut r);
    let prepared = PreparedGraph::from_graph(&g);
    let batch = GraphBatch::from_graphs(&[g.clone(), random_graph(5, 3, 2, &mut r)])?;
    let pooled = PreparedGraph::from_batch(&batch);
    let mut out = Vec::new();

    for kind in KINDS {
        let spec = test_spec(kind, 3, Pooling::None);
        let params = init_params(&spec, &mut r)?;
        let rep = check_gradients(&params.tensors, EPS, |t, vars| {
            let h = forward(t, &spec, vars, &prepared, false, &mut rng(1))?;
            let sq = t.mul(h, h)?;
            t.sum(sq)
        })?;
        out.push(Check::below(format!("grad {} encoder", kind.name()), rep.max_rel_err, BOUND));

        let spec = test_spec(kind, 3, Pooling::GlobalAdd);
        let params = init_params(&spec, &mut r)?;
        let rep = check_gradients(&params.tensors, EPS, |t, vars| {
            let h = forward(t, &spec, vars, &pooled, false, &mut rng(1))?;
            t.sum(h)
        })?;
        out.push(Check::below(format!("grad {} pooled encoder", kind.name()), rep.max_rel_err, BOUND));
    }

    // Two encoders joined by the loss, gradients through both.
    for (a, b) in [(EncoderKind::Gcn, EncoderKind::Gat), (EncoderKind::Gin, EncoderKind::Gcn), (EncoderKind::Gat, EncoderKind::Gin)] {
        let (sa, sb) = (test_spec(a, 3, Pooling::None), test_spec(b, 3, Pooling::None));
        let (pa, pb) = (init_params(&sa, &mut r)?, init_params(&sb, &mut r)?);
        let split = pa.tensors.len();
        let inputs: Vec<Matrix> = pa.tensors.iter().chain(&pb.tensors).cloned().collect();
        let rep = check_gradients(&inputs, EPS, |t, vars| {
            let ha = forward(t, &sa, &vars[..split], &prepared, false, &mut rng(1))?;
            let hb = forward(t, &sb, &vars[split..], &prepared, false, &mut rng(1))?;
            t.info_nce(ha, hb, 0.5)
        })?;
        out.push(Check::below(format!("grad {}+{} contrastive", a.name(), b.name()), rep.max_rel_err, BOUND));
    }

    let adj = &prepared.norm_adj;
    let loops = &prepared.adj_loops;
    let x = || uniform(6, 3, &mut rng(2));
    let w = uniform(3, 3, &mut rng(3));
    type Case<'c> = (&'static str, Vec<Matrix>, Box<dyn Fn(&mut Tape<'c>, &[Var]) -> Result<Var> + 'c>);
    let cases: Vec<Case<'_>> = vec![
        ("matmul", vec![x(), w.clone()], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            t.sum(y)
        })),
        ("matmul_nt", vec![x(), x()], Box::new(|t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        })),
        ("spmm", vec![x()], Box::new(move |t, v| {
            let y = t.spmm(adj, v[0])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        })),
        ("elementwise", vec![x()], Box::new(|t, v| {
            let a = t.elu(v[0])?;
            let b = t.relu(v[0])?;
            let c = t.exp(v[0])?;
            let d = t.leaky_relu(v[0], 0.2)?;
            let e = t.scale(c, 0.5)?;
            let f = t.add(a, b)?;
            let g = t.mul(f, e)?;
            let g = t.add(g, d)?;
            let s = t.exp(v[0])?;
            let l = t.log(s)?;
            let g = t.mul(g, l)?;
            t.sum(g)
        })),
        ("row_log_softmax", vec![x()], Box::new(|t, v| {
            let y = t.row_log_softmax(v[0])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        })),
        ("row_normalize", vec![x()], Box::new(|t, v| {
            let y = t.row_normalize(v[0])?;
            let y = t.mul(y, y)?;
            let y = t.scale(y, 3.0)?;
            let y = t.exp(y)?;
            t.sum(y)
        })),
        ("attention", vec![x(), uniform(2, 3, &mut rng(4))], Box::new(move |t, v| {
            let s = t.matmul_nt(v[0], v[1])?;
            let e = t.edge_scores(loops, s)?;
            let e = t.leaky_relu(e, 0.2)?;
            let a = t.edge_softmax(loops, e)?;
            let y = t.edge_aggregate(loops, a, v[0])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        })),
        ("info_nce", vec![x(), x()], Box::new(|t, v| t.info_nce(v[0], v[1], 0.7))),
        ("cross_entropy", vec![x()], Box::new(|t, v| t.cross_entropy(v[0], &[0, 1, 2, 0, 1, 2]))),
        ("trace", vec![uniform(4, 4, &mut rng(5))], Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            t.trace(y)
        })),
    ];
    for (name, inputs, f) in cases {
        let rep = check_gradients(&inputs, EPS, |t, v| f(t, v))?;
        out.push(Check::below(format!("grad op {name}"), rep.max_rel_err, BOUND));
    }
    Ok(out)
}

/// Naive per-term InfoNCE on plain matrices.
pub fn naive_info_nce(hp: &Matrix, hq: &Matrix, tau: f64) -> f64 {
    let n = hp.rows();
    let mut loss = 0.0;
    for j in 0..n {
        let s = |m: usize| hp.row(j).iter().zip(hq.row(m)).map(|(a, b)| a * b).sum::<f64>() / tau;
        let denom: f64 = (0..n).map(|m| s(m).exp()).sum();
        loss -= (s(j).exp() / denom).ln();
    }
    loss
}

/// The fused loss against the naive double loop, the expanded form, and the
/// loss composed from matmul, row log-softmax and trace, over `instances`
/// random 8×4 pairs. Also checks non-negativity and temperature scaling.
pub fn loss_oracle_checks(instances: usize) -> Result<Vec<Check>> {
    let mut r = rng(10);
    let (mut naive, mut expanded, mut composed, mut scaled) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut negative = 0.0f64;
    for _ in 0..instances {
        let (hp, hq) = (uniform(8, 4, &mut r), uniform(8, 4, &mut r));
        let tau = r.random_range(0.1..2.0);
        let fused = info_nce_value(&hp, &hq, tau)?;
        naive = naive.max((fused - naive_info_nce(&hp, &hq, tau)).abs());
        let (ratio, exp_form) = loss_forms(&hp, &hq, tau)?;
        expanded = expanded.max((fused - exp_form).abs()).max((ratio - exp_form).abs());

        let mut t = Tape::new();
        let (p, q) = (t.constant(hp.clone()), t.constant(hq.clone()));
        let s = t.matmul_nt(p, q)?;
        let s = t.scale(s, 1.0 / tau)?;
        let l = t.row_log_softmax(s)?;
        let d = t.trace(l)?;
        let c = t.scale(d, -1.0)?;
        composed = composed.max((fused - t.value(c).get(0, 0)).abs());

        let k = r.random_range(0.5..4.0);
        scaled = scaled.max((fused - info_nce_value(&hp.map(|v| v * k), &hq, tau * k)?).abs());
        negative = negative.max(-fused);
    }
    Ok(vec![
        Check::below("info_nce vs naive double loop", naive, 1e-10),
        Check::below("info_nce vs expanded form", expanded, 1e-10),
        Check::below("info_nce vs composed log-softmax", composed, 1e-10),
        Check::below("temperature scaling invariance", scaled, 1e-10),
        Check::below("non-negativity violation", negative, 1e-12),
    ])
}

/// Loss values with closed forms.
pub fn closed_form_checks() -> Result<Vec<Check>> {
    let one = Matrix::from_rows(&[[0.3, -0.7, 1.1]]);
    let single = info_nce_value(&one, &one.map(|v| v * 2.0), 0.5)?;
    let i2 = Matrix::identity(2);
    let pair = info_nce_value(&i2, &i2, 1.0)?;
    let h = uniform(4, 3, &mut rng(20));
    let uniform_limit = 4.0 * 4f64.ln();
    let hot = info_nce_value(&h, &uniform(4, 3, &mut rng(21)), 1e6)?;
    Ok(vec![
        Check::exactly("N=1 loss", single, 0.0),
        Check::below("N=2 identity loss vs 0.626523", (pair - 0.626523).abs(), 1e-6),
        Check::below("tau=1e6 relative gap to 4 ln 4", (hot - uniform_limit).abs() / uniform_limit, 0.01),
    ])
}

/// Permutation invariance of pooled embeddings, permutation equivariance
/// of node embeddings and batch independence, for every encoder kind.
pub fn invariance_checks() -> Result<Vec<Check>> {
    let mut r = rng(30);
    let graphs: Vec<Graph> = (0..5)
        .map(|i| {
            let n = 4 + i;
            random_graph(n, 3, i + 1, &mut r)
        })
        .collect();
    let mut out = Vec::new();
    let mut eval_rng = rng(31);
    for kind in KINDS {
        let spec = EncoderSpec {
            dropout: 0.5,
            ..EncoderSpec::graph_level(kind, 3, 8)
        };
        let params = init_params(&spec, &mut r)?;
        let node_spec = EncoderSpec {
            pooling: Pooling::None,
            ..spec.clone()
        };

        let batch = GraphBatch::from_graphs(&graphs)?;
        let together = encode(&spec, &params, &PreparedGraph::from_batch(&batch), false, &mut eval_rng)?;
        let (mut perm_diff, mut batch_diff, mut equi_diff) = (0.0f64, 0.0f64, 0.0f64);
        for (gi, g) in graphs.iter().enumerate() {
            let alone_batch = GraphBatch::from_graphs(std::slice::from_ref(g))?;
            let alone = encode(&spec, &params, &PreparedGraph::from_batch(&alone_batch), false, &mut eval_rng)?;
            batch_diff = batch_diff.max(
                alone
                    .row(0)
                    .iter()
                    .zip(together.row(gi))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );

            let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
            perm.shuffle(&mut r);
            let pg = permute(g, &perm);
            let pb = GraphBatch::from_graphs(std::slice::from_ref(&pg))?;
            let permuted = encode(&spec, &params, &PreparedGraph::from_batch(&pb), false, &mut eval_rng)?;
            perm_diff = perm_diff.max(alone.max_abs_diff(&permuted));

            let nodes = encode(&node_spec, &params, &PreparedGraph::from_graph(g), false, &mut eval_rng)?;
            let pnodes = encode(&node_spec, &params, &PreparedGraph::from_graph(&pg), false, &mut eval_rng)?;
            for (i, &p) in perm.iter().enumerate() {
                for (a, b) in nodes.row(i).iter().zip(pnodes.row(p)) {
                    equi_diff = equi_diff.max((a - b).abs());
                }
            }
        }
        out.push(Check::below(format!("{} pooled permutation invariance", kind.name()), perm_diff, 1e-10));
        out.push(Check::below(format!("{} node permutation equivariance", kind.name()), equi_diff, 1e-10));
        out.push(Check::below(format!("{} batch independence", kind.name()), batch_diff, 1e-10));
    }
    Ok(out)
}

/// All suites, in order.
pub fn run_all() -> Result<Vec<Check>> {
    let mut all = gradient_checks()?;
    all.extend(loss_oracle_checks(100)?);
    all.extend(closed_form_checks()?);
    all.extend(invariance_checks()?);
    Ok(all)
}
