//! End-to-end finetuning of a graph encoder with a linear head.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{accuracy, argmax_rows, class_count, embed_graphs};
use crate::autodiff::{Tape, Var};
use crate::encoder::{forward, init_params, EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch, PreparedGraph};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamState};
use crate::rng::{Purpose, RunSeed};

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    /// Share of each class used for training.
    pub label_fraction: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Full-batch optimizer steps on the labeled subset.
    pub steps: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            label_fraction: 0.1,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            steps: 120,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneResult {
    pub accuracy: f64,
    /// Optimizer steps actually taken.
    pub steps: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub encoder: EncoderParams,
}

/// Trains `spec`'s encoder, starting from `init` or from a fresh seeded
/// initialization, together with a linear head on a stratified labeled
/// subset, and reports accuracy on the remaining graphs. With a label
/// fraction of 1 every graph is used for training and accuracy is measured
/// on the training set.
pub fn finetune(
    spec: &EncoderSpec,
    init: Option<&EncoderParams>,
    graphs: &[Graph],
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if !(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "label fraction must be in (0, 1], got {}",
            cfg.label_fraction
        )));
    }
    let labels: Vec<usize> = graphs
        .iter()
        .map(|g| g.graph_label())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument("finetuning needs graph labels".into()))?;
    let classes = class_count(&labels);
    let seed = RunSeed(cfg.seed);
    let (train, test) = labeled_subset(&labels, classes, cfg.label_fraction, &mut seed.rng(Purpose::Finetune(0)))?;

    let mut encoder = match init {
        Some(p) => {
            p.check(spec)?;
            p.clone()
        }
        None => init_params(spec, &mut seed.rng(Purpose::Init(0)))?,
    };
    let mut rng = seed.rng(Purpose::Finetune(1));
    let bound = libm::sqrt(6.0 / (spec.hidden_dim + classes) as f64);
    let head_w = (0..spec.hidden_dim * classes).map(|_| rng.random_range(-bound..=bound)).collect();
    let mut head = [Matrix::from_vec(spec.hidden_dim, classes, head_w)?, Matrix::zeros(1, classes)];
    let mut enc_state = AdamState::new(&encoder.tensors);
    let mut head_state = AdamState::new(head.iter());
    let adam = Adam::new(cfg.learning_rate, cfg.weight_decay)?;

    let refs: Vec<&Graph> = train.iter().map(|&i| &graphs[i]).collect();
    let batch = GraphBatch::new(&refs, train.clone())?;
    let input = PreparedGraph::from_batch(&batch);
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();

    let mut steps = 0;
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let enc_vars: Vec<Var> = encoder.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let head_vars: Vec<Var> = head.iter().map(|t| tape.param(t.clone())).collect();
        let h = forward(&mut tape, spec, &enc_vars, &input, true, &mut rng)?;
        let z = tape.matmul(h, head_vars[0])?;
        let logits = tape.add_row(z, head_vars[1])?;
        let loss = tape.cross_entropy(logits, &y_train)?;
        tape.backward(loss)?;
        let enc_grads: Vec<Matrix> = enc_vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        let head_grads: Vec<Matrix> = head_vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        drop(tape);
        let names = |i: usize| format!("finetune encoder tensor {i}");
        let mut r: Vec<&mut Matrix> = encoder.tensors.iter_mut().collect();
        adam.step(&mut r, &enc_grads, &mut enc_state, &names)?;
        let names = |i: usize| format!("finetune head tensor {i}");
        let mut r: Vec<&mut Matrix> = head.iter_mut().collect();
        adam.step(&mut r, &head_grads, &mut head_state, &names)?;
        steps += 1;
    }

    let eval_idx = if test.is_empty() { &train } else { &test };
    let eval_graphs: Vec<Graph> = eval_idx.iter().map(|&i| graphs[i].clone()).collect();
    let emb = embed_graphs(spec, &encoder, &eval_graphs)?;
    let mut logits = emb.matrix.matmul(&head[0])?;
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(head[1].row(0)) {
            *v += b;
        }
    }
    let truth: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();
    Ok(FinetuneResult {
        accuracy: accuracy(&argmax_rows(&logits), &truth),
        steps,
        train_size: train.len(),
        test_size: eval_idx.len(),
        encoder,
    })
}

/// Per class, `round(fraction · count)` items (at least one) for training;
/// the rest for evaluation. Both lists come back sorted.
fn labeled_subset<R: rand::Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::Stratification(format!("class {c} has no labeled graphs")));
        }
        members.shuffle(rng);
        let take = (libm::round(fraction * members.len() as f64) as usize).clamp(1, members.len());
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i >= 30)).collect();
        let mut rng = RunSeed(0).rng(Purpose::Finetune(0));
        let (train, test) = labeled_subset(&labels, 2, 0.1, &mut rng).unwrap();
        assert_eq!(train.iter().filter(|&&i| labels[i] == 0).count(), 3);
        assert_eq!(train.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(train.len() + test.len(), 50);
        let (all, none) = labeled_subset(&labels, 2, 1.0, &mut rng).unwrap();
        assert_eq!((all.len(), none.len()), (50, 0));
        assert!(labeled_subset(&[0, 2], 3, 0.5, &mut rng).is_err());
    }
}
