//! Collaborative graph contrastive learning without data augmentation.
//!
//! Several GNN encoders (GCN, GIN, GAT) embed the same graphs; each encoder
//! treats the other encoders' embeddings of an item as its positive keys under
//! an InfoNCE loss and is updated on its own loss. The crate is `no_std` with
//! `alloc`: it contains the dense/sparse kernels, a reverse-mode tape, the
//! encoders, the losses, the training loop and downstream evaluation, and
//! leaves file formats and the command line to the `cgcl` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod synthetic;
pub mod trainer;
pub mod gradcheck;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use sparse::CsrMatrix;
