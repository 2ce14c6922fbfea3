//! Randomized invariants of the numeric kernels and encoders.

use cgcl_core::contrastive::{info_nce_value, loss_equivalence_oracle};
use cgcl_core::encoder::{encode, init_params, EncoderKind, EncoderSpec};
use cgcl_core::graph::{normalized_adjacency, Graph, GraphBatch, PreparedGraph};
use cgcl_core::rng::{Purpose, RunSeed};
use cgcl_core::{CsrMatrix, Matrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// A graph on `n` nodes from a list of candidate edges.
fn graph(n: usize, raw: &[(usize, usize)], x: Matrix) -> Graph {
    let edges = raw.iter().map(|&(u, v)| (u % n, v % n)).filter(|(u, v)| u != v).collect();
    Graph::new(n, edges, x).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..9).prop_flat_map(|n| {
        (
            proptest::collection::vec((0..n, 0..n), 0..2 * n),
            matrix(n, 3),
        )
            .prop_map(move |(e, x)| graph(n, &e, x))
    })
}

const KINDS: [EncoderKind; 3] = [EncoderKind::Gcn, EncoderKind::Gin, EncoderKind::Gat];

fn embed(kind: EncoderKind, g: &PreparedGraph, pooled: bool) -> Matrix {
    let spec = if pooled {
        EncoderSpec::graph_level(kind, 3, 5)
    } else {
        EncoderSpec::node_level(kind, 3, 5)
    };
    let params = init_params(&spec, &mut RunSeed(3).rng(Purpose::Init(0))).unwrap();
    encode(&spec, &params, g, false, &mut RunSeed(3).rng(Purpose::Epoch(0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_triple_loop(a in matrix(4, 3), b in matrix(3, 5)) {
        prop_assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn spmm_matches_dense_product(
        t in proptest::collection::vec((0usize..5, 0usize..4, -1.0f64..1.0), 0..12),
        x in matrix(4, 3),
    ) {
        let s = CsrMatrix::from_triplets(5, 4, &t).unwrap();
        prop_assert!(s.spmm(&x).unwrap().max_abs_diff(&naive_matmul(&s.to_dense(), &x)) < 1e-12);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_unit_spectrum_bound(g in graph_strategy()) {
        let a = normalized_adjacency(&g);
        prop_assert!(a.is_symmetric());
        // sqrt(degree + 1) is an eigenvector of D^-1/2 (A+I) D^-1/2 with eigenvalue 1.
        let d: Vec<f64> = g.degrees().iter().map(|&k| ((k + 1) as f64).sqrt()).collect();
        let v = Matrix::from_vec(d.len(), 1, d.clone()).unwrap();
        let av = a.spmm(&v).unwrap();
        for (i, di) in d.iter().enumerate() {
            prop_assert!((av.get(i, 0) - di).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_is_nonnegative_and_matches_expanded_form(q in matrix(6, 3), k in matrix(6, 3), tau in 0.05f64..5.0) {
        let l = info_nce_value(&q, &k, tau).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!(loss_equivalence_oracle(&q, &k, tau).unwrap() < 1e-10);
    }

    #[test]
    fn pooled_embeddings_ignore_node_order(g in graph_strategy(), seed in 0u64..1000) {
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut RunSeed(seed).rng(Purpose::Synthetic(0)));
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges = g.edges().iter().map(|&(u, v)| (inv[u], inv[v])).collect();
        let h = Graph::new(n, edges, g.features().select_rows(&perm)).unwrap();
        let (pg, ph) = (PreparedGraph::from_graph(&g), PreparedGraph::from_graph(&h));
        for kind in KINDS {
            let batch_g = PreparedGraph::from_batch(&GraphBatch::from_graphs(std::slice::from_ref(&g)).unwrap());
            let batch_h = PreparedGraph::from_batch(&GraphBatch::from_graphs(std::slice::from_ref(&h)).unwrap());
            prop_assert!(embed(kind, &batch_g, true).max_abs_diff(&embed(kind, &batch_h, true)) < 1e-10);
            let (a, b) = (embed(kind, &pg, false), embed(kind, &ph, false));
            prop_assert!(a.select_rows(&perm).max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn batching_never_mixes_graphs(a in graph_strategy(), b in graph_strategy()) {
        let both = PreparedGraph::from_batch(&GraphBatch::from_graphs(&[a.clone(), b.clone()]).unwrap());
        for kind in KINDS {
            let joint = embed(kind, &both, true);
            for (i, g) in [&a, &b].into_iter().enumerate() {
                let alone = embed(kind, &PreparedGraph::from_batch(&GraphBatch::from_graphs(std::slice::from_ref(g)).unwrap()), true);
                prop_assert!(joint.select_rows(&[i]).max_abs_diff(&alone) < 1e-10);
            }
        }
    }
}
