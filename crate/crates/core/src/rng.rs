//! Seeded randomness.
//!
//! Every random draw in a run comes from a ChaCha8 generator keyed by the run
//! seed. Independent consumers (parameter init, each epoch's shuffling and
//! dropout, evaluation splits) get their own stream of the same key, so adding
//! draws in one place never perturbs another, and a run resumed at epoch `e`
//! sees exactly the stream it would have seen without interruption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream of random numbers is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Parameter initialization of encoder `i`.
    Init(usize),
    /// Shuffling and dropout during training epoch `e`.
    Epoch(usize),
    /// Cross-validation fold assignment for repetition `r`.
    Folds(usize),
    /// Node split draw `r`.
    NodeSplit(usize),
    /// Downstream classifier training for run `r`.
    Classifier(usize),
    /// Labeled-subset selection and steps of finetuning.
    Finetune(usize),
    /// Synthetic data generation.
    Synthetic(usize),
}

impl Purpose {
    fn stream_id(self) -> u64 {
        let (tag, idx) = match self {
            Purpose::Init(i) => (1, i),
            Purpose::Epoch(e) => (2, e),
            Purpose::Folds(r) => (3, r),
            Purpose::NodeSplit(r) => (4, r),
            Purpose::Classifier(r) => (5, r),
            Purpose::Finetune(r) => (6, r),
            Purpose::Synthetic(r) => (7, r),
        };
        (tag << 48) | (idx as u64 & 0xffff_ffff_ffff)
    }
}

/// The root seed of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunSeed(pub u64);

impl RunSeed {
    pub fn rng(self, purpose: Purpose) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(purpose.stream_id());
        rng
    }
}
