//! Embedding TSV, convergence CSV and JSON-lines results.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use cgcl_core::eval::EmbeddingSet;
use cgcl_core::trainer::ConvergenceLog;
use cgcl_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write, CliError, Result};

/// `id<TAB>label<TAB>e0 .. e{d-1}` with a header row. Values carry 17
/// significant digits, enough to reproduce every f64 exactly. A missing
/// label is an empty field.
pub fn write_embeddings(path: &Path, emb: &EmbeddingSet) -> Result<()> {
    let mut out = String::from("id\tlabel");
    for j in 0..emb.dim() {
        write!(out, "\te{j}").unwrap();
    }
    out.push('\n');
    for r in 0..emb.len() {
        write!(out, "{}\t", emb.ids[r]).unwrap();
        if let Some(l) = &emb.labels {
            write!(out, "{}", l[r]).unwrap();
        }
        for v in emb.matrix.row(r) {
            write!(out, "\t{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    write(path, out)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CliError::parse(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(CliError::parse(path, 1, "header must start with id<TAB>label"));
    }
    let d = cols.len() - 2;
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("e{j}") {
            return Err(CliError::parse(path, 1, format!("column {} should be e{j}, got {c:?}", j + 2)));
        }
    }
    let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
    let mut any_label = None;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let n = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != d + 2 {
            return Err(CliError::parse(path, n, format!("{} fields, expected {}", f.len(), d + 2)));
        }
        ids.push(f[0].parse::<usize>().map_err(|_| CliError::parse(path, n, "bad id"))?);
        let has = !f[1].is_empty();
        if *any_label.get_or_insert(has) != has {
            return Err(CliError::parse(path, n, "labels must be present on all rows or none"));
        }
        if has {
            labels.push(f[1].parse::<usize>().map_err(|_| CliError::parse(path, n, "bad label"))?);
        }
        for v in &f[2..] {
            data.push(v.parse::<f64>().map_err(|_| CliError::parse(path, n, format!("bad value {v:?}")))?);
        }
    }
    let m = ids.len();
    let labels = (any_label == Some(true)).then_some(labels);
    Ok(EmbeddingSet::new(Matrix::from_vec(m, d, data)?, ids, labels)?)
}

/// `epoch,encoder,mean_loss,seconds`, encoders named by kind and index.
pub fn write_convergence(path: &Path, log: &ConvergenceLog, encoder_names: &[String]) -> Result<()> {
    let mut out = String::from("epoch,encoder,mean_loss,seconds\n");
    for r in &log.rows {
        let name = encoder_names.get(r.encoder).cloned().unwrap_or_else(|| r.encoder.to_string());
        writeln!(out, "{},{name},{:.17e},{:.3}", r.epoch, r.mean_loss, r.seconds).unwrap();
    }
    write(path, out)
}

/// One evaluation outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub encoders: Vec<String>,
    pub seed: u64,
    pub accuracy: f64,
}

/// Appends records, one JSON object per line.
pub fn append_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::parse(path, i + 1, e.to_string())))
        .collect()
}
