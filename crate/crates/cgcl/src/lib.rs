//! Datasets, checkpoints and the command-line driver around `cgcl-core`.
//!
//! File formats:
//!
//! * TUDataset directories ([`tudataset`]) for graph-level data.
//! * Node interchange directories ([`interchange`]) for one large graph.
//! * Checkpoints ([`checkpoint`]): a text manifest followed by
//!   little-endian `f64` blobs.
//! * Embedding TSV, convergence CSV and JSON-lines results ([`export`]).

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod interchange;
pub mod parallel;
pub mod selftest;
pub mod tudataset;

pub use error::{CliError, Result};
