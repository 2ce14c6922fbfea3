//! Round trips and error reporting of the on-disk formats.

use std::path::Path;

use cgcl::error::CliError;
use cgcl::export::{append_results, read_embeddings, read_results, write_embeddings, ResultRecord};
use cgcl::interchange::{load_node_dataset, read_meta, write_node_dataset};
use cgcl::tudataset::{load_tudataset, write_tudataset};
use cgcl_core::eval::EmbeddingSet;
use cgcl_core::synthetic::{PlantedPartition, RingsVsTrees};
use cgcl_core::Matrix;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write_files(dir: &Path, files: &[(&str, &str)]) {
    for (name, body) in files {
        std::fs::write(dir.join(name), body).unwrap();
    }
}

#[test]
fn toy_fixture_loads() {
    let graphs = load_tudataset(&fixture("toy-tu"), "toy").unwrap();
    assert_eq!(graphs.len(), 12);
    assert_eq!(graphs.iter().map(|g| g.num_nodes()).sum::<usize>(), 66);
    // Labels 1 / -1 become ranks 1 / 0; node labels 0..2 become 3 one-hot columns.
    assert_eq!(graphs[0].graph_label(), Some(1));
    assert_eq!(graphs[1].graph_label(), Some(0));
    assert_eq!(graphs[0].feature_dim(), 3);
    assert_eq!(graphs[0].num_edges(), 4);
}

#[test]
fn mutag_fixture_has_the_published_counts() {
    let graphs = load_tudataset(&fixture("MUTAG"), "MUTAG").unwrap();
    assert_eq!(graphs.len(), 188);
    assert_eq!(graphs.iter().map(|g| g.num_nodes()).sum::<usize>(), 3371);
    assert_eq!(graphs.iter().map(|g| g.num_edges()).sum::<usize>(), 7442 / 2);
    assert_eq!(graphs.iter().filter(|g| g.graph_label() == Some(1)).count(), 125);
    assert_eq!(graphs[0].feature_dim(), 7);
}

#[test]
fn tudataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graphs = RingsVsTrees { count: 9, ..RingsVsTrees::default() }.generate(3).unwrap();
    write_tudataset(dir.path(), "rt", &graphs).unwrap();
    let back = load_tudataset(dir.path(), "rt").unwrap();
    assert_eq!(back.len(), graphs.len());
    for (a, b) in graphs.iter().zip(&back) {
        let norm = |g: &cgcl_core::graph::Graph| {
            let mut e: Vec<_> = g.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            e.sort_unstable();
            e
        };
        assert_eq!(norm(a), norm(b));
        assert_eq!(a.features(), b.features());
        assert_eq!(a.graph_label(), b.graph_label());
    }
}

#[test]
fn tudataset_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write_files(
        dir.path(),
        &[
            ("bad_A.txt", "1, 2\n2, x\n"),
            ("bad_graph_indicator.txt", "1\n1\n"),
            ("bad_graph_labels.txt", "0\n"),
        ],
    );
    match load_tudataset(dir.path(), "bad") {
        Err(CliError::Parse { path, line, .. }) => {
            assert!(path.ends_with("bad_A.txt"));
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }
    write_files(dir.path(), &[("bad_A.txt", "1, 3\n"), ("bad_graph_indicator.txt", "1\n1\n2\n"), ("bad_graph_labels.txt", "0\n1\n")]);
    let e = load_tudataset(dir.path(), "bad").unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}

#[test]
fn interchange_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = PlantedPartition::default().generate(4).unwrap();
    write_node_dataset(dir.path(), &g).unwrap();
    let meta = read_meta(dir.path()).unwrap();
    assert_eq!((meta.num_nodes, meta.num_classes, meta.feature_dim), (60, 3, 30));
    let back = load_node_dataset(dir.path()).unwrap();
    assert_eq!(back.features(), g.features());
    assert_eq!(back.node_labels(), g.node_labels());
    assert_eq!(back.num_edges(), g.num_edges());
}

#[test]
fn interchange_rejects_out_of_range_endpoints_and_classes() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        ("meta.tsv", "num_nodes\t3\nnum_classes\t2\nfeature_dim\t1\n"),
        ("features.tsv", "1\n2\n3\n"),
        ("labels.tsv", "0\n1\n0\n"),
        ("edges.tsv", "0\t1\n1\t2\n"),
    ];
    write_files(dir.path(), &base);
    assert_eq!(load_node_dataset(dir.path()).unwrap().num_edges(), 2);

    write_files(dir.path(), &[("edges.tsv", "0\t1\n1\t3\n")]);
    assert!(matches!(load_node_dataset(dir.path()), Err(CliError::Parse { line: 2, .. })));

    write_files(dir.path(), &[("edges.tsv", "0\t1\n"), ("labels.tsv", "0\n2\n0\n")]);
    assert!(matches!(load_node_dataset(dir.path()), Err(CliError::Parse { line: 2, .. })));

    write_files(dir.path(), &[("labels.tsv", "0\n1\n")]);
    assert_eq!(load_node_dataset(dir.path()).unwrap_err().exit_code(), 3);
}

#[test]
fn embedding_tsv_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.tsv");
    let m = Matrix::from_rows(&[[0.1, -1.0 / 3.0], [1e-300, f64::MAX], [std::f64::consts::PI, -0.0]]);
    for labels in [Some(vec![2, 0, 1]), None] {
        let emb = EmbeddingSet::new(m.clone(), vec![5, 6, 7], labels).unwrap();
        write_embeddings(&path, &emb).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("id\tlabel\te0\te1\n"));
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, emb);
        for (a, b) in back.matrix.as_slice().iter().zip(m.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn results_append_as_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let rec = |seed| ResultRecord {
        dataset: "mutag".into(),
        encoders: vec!["gin".into(), "gcn".into()],
        seed,
        accuracy: 0.875,
    };
    append_results(&path, &[rec(0), rec(1)]).unwrap();
    append_results(&path, &[rec(2)]).unwrap();
    assert_eq!(read_results(&path).unwrap(), vec![rec(0), rec(1), rec(2)]);
    let first = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(v["accuracy"], 0.875);
}
