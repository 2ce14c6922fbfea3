//! Frozen-embedding linear probe for graph classification.
//!
//! Each repetition assigns items to 10 stratified folds. For every outer
//! fold, the next fold (cyclically) is held out from the remaining nine to
//! choose C from [`C_GRID`]; the classifier is then refit on all nine with
//! the chosen C and scored on the outer fold. A repetition's accuracy is the
//! mean over its folds.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::svm::{LinearSvm, Standardizer};
use super::{accuracy, class_count, EmbeddingSet, RunStats};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RunSeed};

pub const C_GRID: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbeConfig {
    pub folds: usize,
    pub repeats: usize,
    pub c_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig {
            folds: 10,
            repeats: 10,
            c_grid: C_GRID.to_vec(),
            seed: 0,
        }
    }
}

/// Fold index of every item. Each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped, so fold sizes differ by at
/// most one. Fails when some class has fewer members than there are folds.
pub fn stratified_folds<R: rand::Rng + ?Sized>(labels: &[usize], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let classes = class_count(labels);
    let mut assign = alloc::vec![0usize; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Stratification(format!(
                "class {c} has {} items, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(rng);
        for i in members {
            assign[i] = next % folds;
            next += 1;
        }
    }
    Ok(assign)
}

/// Accuracy of one repetition of the protocol.
pub fn linear_probe_run(emb: &EmbeddingSet, cfg: &LinearProbeConfig, repeat: usize) -> Result<f64> {
    let labels = emb.labels_or_err()?;
    let distinct = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(Error::InvalidArgument("linear probe needs at least two classes".into()));
    }
    if cfg.c_grid.is_empty() {
        return Err(Error::InvalidArgument("empty C grid".into()));
    }
    let seed = RunSeed(cfg.seed);
    let folds = stratified_folds(labels, cfg.folds, &mut seed.rng(Purpose::Folds(repeat)))?;
    let mut rng = seed.rng(Purpose::Classifier(repeat));
    let rows_in = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> { (0..labels.len()).filter(|&i| pred(folds[i])).collect() };
    let pick = |rows: &[usize]| -> Vec<usize> { rows.iter().map(|&i| labels[i]).collect() };

    let mut total = 0.0;
    for f in 0..cfg.folds {
        let inner = (f + 1) % cfg.folds;
        let train = rows_in(&|k| k != f);
        let fit = rows_in(&|k| k != f && k != inner);
        let val = rows_in(&|k| k == inner);
        let test = rows_in(&|k| k == f);

        let std = Standardizer::fit(&emb.matrix, &fit);
        let (xf, xv) = (std.apply(&emb.matrix, &fit), std.apply(&emb.matrix, &val));
        let (yf, yv) = (pick(&fit), pick(&val));
        let mut best = (f64::NEG_INFINITY, cfg.c_grid[0]);
        for &c in &cfg.c_grid {
            let acc = accuracy(&LinearSvm::fit(&xf, &yf, c, &mut rng)?.predict(&xv), &yv);
            if acc > best.0 {
                best = (acc, c);
            }
        }

        let std = Standardizer::fit(&emb.matrix, &train);
        let svm = LinearSvm::fit(&std.apply(&emb.matrix, &train), &pick(&train), best.1, &mut rng)?;
        total += accuracy(&svm.predict(&std.apply(&emb.matrix, &test)), &pick(&test));
    }
    Ok(total / cfg.folds as f64)
}

/// All repetitions; the run seeds in the result are repetition indices.
pub fn linear_probe_graph(emb: &EmbeddingSet, cfg: &LinearProbeConfig) -> Result<RunStats> {
    let runs = (0..cfg.repeats)
        .map(|r| linear_probe_run(emb, cfg, r).map(|a| (r as u64, a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunStats::from_runs(runs))
}
