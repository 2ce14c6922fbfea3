//! The TUDataset text layout.
//!
//! `NAME_A.txt` lists directed edges as comma-separated, 1-indexed global
//! node ids; `NAME_graph_indicator.txt` gives each node's 1-indexed graph;
//! `NAME_graph_labels.txt` gives one label per graph. Optional
//! `NAME_node_labels.txt` and `NAME_node_attributes.txt` describe nodes.
//! Graph labels are remapped to `0..C` in sorted order. Node labels become
//! one-hot features when no attribute file is present. Self-loops are
//! dropped and reverse duplicates merged.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use cgcl_core::graph::Graph;
use cgcl_core::Matrix;

use crate::error::{read_to_string, write, CliError, Result};

/// Reads `dir/NAME_*.txt`.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<Vec<Graph>> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let required = |suffix: &str| -> Result<(std::path::PathBuf, String)> {
        let p = file(suffix);
        if !p.is_file() {
            return Err(CliError::Data(format!("missing mandatory file {}", p.display())));
        }
        let text = read_to_string(&p)?;
        Ok((p, text))
    };
    let optional = |suffix: &str| -> Result<Option<(std::path::PathBuf, String)>> {
        let p = file(suffix);
        if p.is_file() {
            let text = read_to_string(&p)?;
            Ok(Some((p, text)))
        } else {
            Ok(None)
        }
    };

    let (ind_path, ind_text) = required("graph_indicator")?;
    let indicator: Vec<usize> = int_lines(&ind_path, &ind_text)?
        .into_iter()
        .map(|(line, v)| {
            if v < 1 {
                Err(CliError::parse(&ind_path, line, "graph ids are 1-indexed"))
            } else {
                Ok(v as usize - 1)
            }
        })
        .collect::<Result<_>>()?;
    let num_graphs = indicator.iter().max().map_or(0, |m| m + 1);
    let num_nodes = indicator.len();

    // Local index of each node within its graph, in file order.
    let mut sizes = vec![0usize; num_graphs];
    let local: Vec<usize> = indicator
        .iter()
        .map(|&g| {
            sizes[g] += 1;
            sizes[g] - 1
        })
        .collect();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(CliError::Data(format!(
            "{}: graph {} has no nodes",
            ind_path.display(),
            g + 1
        )));
    }

    let (lab_path, lab_text) = required("graph_labels")?;
    let raw_labels: Vec<i64> = int_lines(&lab_path, &lab_text)?.into_iter().map(|(_, v)| v).collect();
    if raw_labels.len() != num_graphs {
        return Err(CliError::Data(format!(
            "{}: {} labels for {num_graphs} graphs",
            lab_path.display(),
            raw_labels.len()
        )));
    }
    let graph_labels = remap(&raw_labels);

    let (a_path, a_text) = required("A")?;
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, text) in numbered(&a_text) {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(CliError::parse(&a_path, line, "expected two comma-separated node ids"));
        }
        let mut ends = [0usize; 2];
        for (slot, p) in ends.iter_mut().zip(&parts) {
            let v: usize = p
                .parse()
                .map_err(|_| CliError::parse(&a_path, line, format!("bad node id {p:?}")))?;
            if v < 1 || v > num_nodes {
                return Err(CliError::parse(&a_path, line, format!("node id {v} outside 1..={num_nodes}")));
            }
            *slot = v - 1;
        }
        let (u, v) = (ends[0], ends[1]);
        if indicator[u] != indicator[v] {
            return Err(CliError::parse(
                &a_path,
                line,
                format!("edge {} - {} crosses graphs {} and {}", u + 1, v + 1, indicator[u] + 1, indicator[v] + 1),
            ));
        }
        if u != v {
            edges[indicator[u]].push((local[u], local[v]));
        }
    }

    let features: Vec<Vec<f64>> = if let Some((p, text)) = optional("node_attributes")? {
        let rows = float_rows(&p, &text, ',')?;
        if rows.len() != num_nodes {
            return Err(CliError::Data(format!(
                "{}: {} attribute rows for {num_nodes} nodes",
                p.display(),
                rows.len()
            )));
        }
        rows
    } else if let Some((p, text)) = optional("node_labels")? {
        let raw: Vec<i64> = int_lines(&p, &text)?.into_iter().map(|(_, v)| v).collect();
        if raw.len() != num_nodes {
            return Err(CliError::Data(format!(
                "{}: {} node labels for {num_nodes} nodes",
                p.display(),
                raw.len()
            )));
        }
        let ids = remap(&raw);
        let width = ids.iter().max().map_or(0, |m| m + 1);
        ids.into_iter()
            .map(|c| {
                let mut row = vec![0.0; width];
                row[c] = 1.0;
                row
            })
            .collect()
    } else {
        vec![Vec::new(); num_nodes]
    };
    let dim = features.first().map_or(0, Vec::len);

    let mut data: Vec<Vec<f64>> = (0..num_graphs).map(|g| Vec::with_capacity(sizes[g] * dim)).collect();
    for (node, row) in features.iter().enumerate() {
        data[indicator[node]].extend_from_slice(row);
    }
    (0..num_graphs)
        .zip(edges)
        .zip(data)
        .map(|((g, e), x)| {
            let x = Matrix::from_vec(sizes[g], dim, x)?;
            Ok(Graph::new(sizes[g], e, x)?.with_graph_label(graph_labels[g]))
        })
        .collect()
}

/// Writes `graphs` in the same layout; features go to `NAME_node_attributes.txt`
/// when they have any columns. Graph labels are written as stored.
pub fn write_tudataset(dir: &Path, name: &str, graphs: &[Graph]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (mut a, mut ind, mut lab, mut attr) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (g, graph) in graphs.iter().enumerate() {
        for &(u, v) in graph.edges() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).unwrap();
            writeln!(a, "{}, {}", v + offset + 1, u + offset + 1).unwrap();
        }
        for n in 0..graph.num_nodes() {
            writeln!(ind, "{}", g + 1).unwrap();
            let row: Vec<String> = graph.features().row(n).iter().map(f64::to_string).collect();
            writeln!(attr, "{}", row.join(", ")).unwrap();
        }
        let label = graph
            .graph_label()
            .ok_or_else(|| CliError::Data(format!("graph {g} has no label")))?;
        writeln!(lab, "{label}").unwrap();
        offset += graph.num_nodes();
    }
    write(&dir.join(format!("{name}_A.txt")), a)?;
    write(&dir.join(format!("{name}_graph_indicator.txt")), ind)?;
    write(&dir.join(format!("{name}_graph_labels.txt")), lab)?;
    if graphs.first().is_some_and(|g| g.feature_dim() > 0) {
        write(&dir.join(format!("{name}_node_attributes.txt")), attr)?;
    }
    Ok(())
}

/// Non-blank lines with 1-based line numbers.
pub(crate) fn numbered(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn int_lines(path: &Path, text: &str) -> Result<Vec<(usize, i64)>> {
    numbered(text)
        .map(|(line, l)| {
            l.parse::<i64>()
                .map(|v| (line, v))
                .map_err(|_| CliError::parse(path, line, format!("expected an integer, got {l:?}")))
        })
        .collect()
}

pub(crate) fn float_rows(path: &Path, text: &str, sep: char) -> Result<Vec<Vec<f64>>> {
    let mut width = None;
    numbered(text)
        .map(|(line, l)| {
            let row = l
                .split(sep)
                .map(|f| {
                    let f = f.trim();
                    match f.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(CliError::parse(path, line, format!("bad number {f:?}"))),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(CliError::parse(path, line, format!("ragged row: {} values, expected {w}", row.len())))
                }
                _ => {}
            }
            Ok(row)
        })
        .collect()
}

/// Maps raw values to their rank among the distinct values.
fn remap(raw: &[i64]) -> Vec<usize> {
    let distinct: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|v| distinct.binary_search(v).expect("value is present"))
        .collect()
}
