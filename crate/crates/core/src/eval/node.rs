//! Node classification: seeded label splits and an MLP probe.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{accuracy, argmax_rows, class_count, EmbeddingSet};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamState};
use crate::rng::{Purpose, RunSeed};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `per_class` training nodes of every class, then `val` and `test`
/// nodes from what remains, all without replacement.
pub fn make_node_split<R: rand::Rng + ?Sized>(
    labels: &[usize],
    per_class: usize,
    val: usize,
    test: usize,
    rng: &mut R,
) -> Result<NodeSplit> {
    let classes = class_count(labels);
    let mut train = Vec::with_capacity(per_class * classes);
    let mut rest = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < per_class {
            return Err(Error::Insufficient(format!(
                "class {c} has {} nodes, {per_class} needed for training",
                members.len()
            )));
        }
        members.shuffle(rng);
        train.extend_from_slice(&members[..per_class]);
        rest.extend_from_slice(&members[per_class..]);
    }
    if rest.len() < val + test {
        return Err(Error::Insufficient(format!(
            "{} nodes left after training selection, {} needed for validation and test",
            rest.len(),
            val + test
        )));
    }
    rest.sort_unstable();
    rest.shuffle(rng);
    Ok(NodeSplit {
        train,
        val: rest[..val].to_vec(),
        test: rest[val..val + test].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeProbeConfig {
    /// Hidden width; the embedding width when `None`.
    pub hidden: Option<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a better validation accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for NodeProbeConfig {
    fn default() -> Self {
        NodeProbeConfig {
            hidden: None,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            max_epochs: 300,
            patience: 50,
            seed: 0,
        }
    }
}

/// Trains a one-hidden-layer relu perceptron on the training nodes and
/// reports test accuracy at the epoch of best validation accuracy.
pub fn node_probe(emb: &EmbeddingSet, split: &NodeSplit, cfg: &NodeProbeConfig, run: usize) -> Result<f64> {
    let labels = emb.labels_or_err()?;
    let classes = class_count(labels);
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument("node split has an empty part".into()));
    }
    let d = emb.dim();
    let h = cfg.hidden.unwrap_or(d).max(1);
    let mut rng = RunSeed(cfg.seed).rng(Purpose::Classifier(run));
    let mut xavier = |r: usize, c: usize| -> Matrix {
        let bound = libm::sqrt(6.0 / (r + c) as f64);
        let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
        Matrix::from_vec(r, c, data).expect("sized by construction")
    };
    let mut params = [xavier(d, h), Matrix::zeros(1, h), xavier(h, classes), Matrix::zeros(1, classes)];
    let mut state = AdamState::new(params.iter());
    let adam = Adam::new(cfg.learning_rate, cfg.weight_decay)?;

    let x_train = emb.matrix.select_rows(&split.train);
    let y_train: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let x_val = emb.matrix.select_rows(&split.val);
    let y_val: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
    let x_test = emb.matrix.select_rows(&split.test);
    let y_test: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();

    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut since = 0;
    for _ in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let logits = mlp(&mut tape, &vars, x_train.clone())?;
        let loss = tape.cross_entropy(logits, &y_train)?;
        tape.backward(loss)?;
        let grads: Vec<Matrix> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        drop(tape);
        let mut refs: Vec<&mut Matrix> = params.iter_mut().collect();
        adam.step(&mut refs, &grads, &mut state, &|i| format!("probe tensor {i}"))?;

        let val_acc = accuracy(&predict(&params, &x_val)?, &y_val);
        if val_acc > best.0 {
            best = (val_acc, accuracy(&predict(&params, &x_test)?, &y_test));
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.1)
}

fn mlp(tape: &mut Tape<'_>, p: &[crate::autodiff::Var], x: Matrix) -> Result<crate::autodiff::Var> {
    let x = tape.constant(x);
    let z = tape.matmul(x, p[0])?;
    let z = tape.add_row(z, p[1])?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, p[2])?;
    tape.add_row(z, p[3])
}

fn predict(params: &[Matrix], x: &Matrix) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let logits = mlp(&mut tape, &vars, x.clone())?;
    Ok(argmax_rows(tape.value(logits)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let mut rng = RunSeed(2).rng(Purpose::NodeSplit(0));
        let s = make_node_split(&labels, 5, 30, 40, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (20, 30, 40));
        for c in 0..4 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 90);

        let one = make_node_split(&labels, 1, 1, 1, &mut rng).unwrap();
        assert_eq!(one.train.len(), 4);
        assert!(!one.val.contains(&one.test[0]) && !one.train.contains(&one.test[0]));

        let again = make_node_split(&labels, 5, 30, 40, &mut RunSeed(2).rng(Purpose::NodeSplit(0))).unwrap();
        assert_eq!(again, s);
        assert!(make_node_split(&labels, 30, 0, 0, &mut rng).is_err());
        assert!(make_node_split(&labels, 20, 20, 1, &mut rng).is_err());
    }
}
