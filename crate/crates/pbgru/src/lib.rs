//! Metro passenger volume forecasting with parallel multi-graph convolution
//! and a stacked bidirectional GRU (PB-GRU).
//!
//! The crate is organised around the model's three branches and the plumbing
//! they need:
//!
//! - [`numerics`] — dense `f64` tensors with reverse-mode gradients, a seeded
//!   RNG, the Adam optimizer, checkpoints, and a finite-difference checker.
//! - [`graph`] — predefined graph construction: multi-hop physical adjacency,
//!   DTW flow-pattern similarity, OD flow direction, multi-hop degrees, and
//!   their normalized forms.
//! - [`data`] — ridership CSV loading, chronological splits, Z-scoring,
//!   sliding windows, and a synthetic metro generator for desk-scale tests.
//! - [`sagru`], [`fsgcn`], [`fdgcn`] — the temporal, flow-similarity, and
//!   flow-direction branches.
//! - [`model`] — branch assembly, dropout, the two prediction heads, and the
//!   ablation wirings.
//! - [`training`] — L1 loss, the step-decay schedule, the training loop, and
//!   evaluation reports.
//! - [`config`] / [`commands`] — run configuration and the operations behind
//!   the CLI subcommands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fdgcn;
pub mod fsgcn;
pub mod gradsuite;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod sagru;
pub mod training;

pub use error::{Error, Result};
