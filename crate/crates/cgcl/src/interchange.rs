//! Node-level interchange directories.
//!
//! ```text
//! edges.tsv     u<TAB>v per line, 0-indexed, one undirected edge each
//! features.tsv  one node per line, tab-separated decimal floats
//! labels.tsv    one integer class id per line
//! meta.tsv      key<TAB>value lines: num_nodes, num_classes, feature_dim
//! ```
//!
//! Duplicate and reversed edges are merged; self-loops are dropped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cgcl_core::graph::Graph;
use cgcl_core::Matrix;

use crate::error::{read_to_string, write, CliError, Result};
use crate::tudataset::{float_rows, numbered};

/// Counts recorded in `meta.tsv`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Meta {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.tsv");
    let text = read_to_string(&path)?;
    let mut kv = BTreeMap::new();
    for (line, l) in numbered(&text) {
        let (k, v) = l
            .split_once('\t')
            .ok_or_else(|| CliError::parse(&path, line, "expected key<TAB>value"))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::parse(&path, line, format!("{k}: expected a count, got {v:?}")))?;
        kv.insert(k.trim().to_string(), v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| CliError::Data(format!("{}: missing key {k}", path.display())))
    };
    Ok(Meta {
        num_nodes: get("num_nodes")?,
        num_classes: get("num_classes")?,
        feature_dim: get("feature_dim")?,
    })
}

/// Reads an interchange directory into one graph with node labels.
pub fn load_node_dataset(dir: &Path) -> Result<Graph> {
    let meta = read_meta(dir)?;
    let n = meta.num_nodes;

    let path = dir.join("features.tsv");
    let rows = float_rows(&path, &read_to_string(&path)?, '\t')?;
    if rows.len() != n {
        return Err(CliError::Data(format!("{}: {} rows, meta says {n} nodes", path.display(), rows.len())));
    }
    let dim = rows.first().map_or(0, Vec::len);
    if dim != meta.feature_dim {
        return Err(CliError::Data(format!(
            "{}: {dim} columns, meta says {}",
            path.display(),
            meta.feature_dim
        )));
    }
    let features = Matrix::from_vec(n, dim, rows.into_iter().flatten().collect())?;

    let path = dir.join("labels.tsv");
    let labels = numbered(&read_to_string(&path)?)
        .map(|(line, l)| {
            l.parse::<usize>()
                .map_err(|_| CliError::parse(&path, line, format!("expected a class id, got {l:?}")))
                .and_then(|c| {
                    if c < meta.num_classes {
                        Ok(c)
                    } else {
                        Err(CliError::parse(&path, line, format!("class {c} outside 0..{}", meta.num_classes)))
                    }
                })
        })
        .collect::<Result<Vec<usize>>>()?;
    if labels.len() != n {
        return Err(CliError::Data(format!("{}: {} labels, meta says {n} nodes", path.display(), labels.len())));
    }

    let path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (line, l) in numbered(&read_to_string(&path)?) {
        let mut it = l.split('\t');
        let mut end = || -> Result<usize> {
            let f = it.next().ok_or_else(|| CliError::parse(&path, line, "expected u<TAB>v"))?;
            let v: usize = f
                .trim()
                .parse()
                .map_err(|_| CliError::parse(&path, line, format!("bad node id {f:?}")))?;
            if v >= n {
                return Err(CliError::parse(&path, line, format!("endpoint {v} outside 0..{n}")));
            }
            Ok(v)
        };
        let (u, v) = (end()?, end()?);
        if it.next().is_some() {
            return Err(CliError::parse(&path, line, "expected exactly two columns"));
        }
        if u != v {
            edges.push((u, v));
        }
    }
    Ok(Graph::new(n, edges, features)?.with_node_labels(labels)?)
}

/// Writes `graph` (which must carry node labels) as an interchange directory.
pub fn write_node_dataset(dir: &Path, graph: &Graph) -> Result<()> {
    let labels = graph
        .node_labels()
        .ok_or_else(|| CliError::Data("graph has no node labels".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut edges = String::new();
    for &(u, v) in graph.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    let mut feats = String::new();
    for r in 0..graph.num_nodes() {
        let row: Vec<String> = graph.features().row(r).iter().map(f64::to_string).collect();
        writeln!(feats, "{}", row.join("\t")).unwrap();
    }
    let mut labs = String::new();
    for l in labels {
        writeln!(labs, "{l}").unwrap();
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let meta = format!(
        "num_nodes\t{}\nnum_classes\t{classes}\nfeature_dim\t{}\n",
        graph.num_nodes(),
        graph.feature_dim()
    );
    write(&dir.join("edges.tsv"), edges)?;
    write(&dir.join("features.tsv"), feats)?;
    write(&dir.join("labels.tsv"), labs)?;
    write(&dir.join("meta.tsv"), meta)
}
