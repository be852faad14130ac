//! Difficulty-aware curriculum loss and gradient-disentangled dual-stream
//! multi-task training, with the synthetic-data experiment harness used to
//! study them.
//!
//! Layers, bottom up:
//! * [`autodiff`] — reverse-mode AD over dense `f64` tensors, including `detach`.
//! * [`losses`] — CE, focal, GCE and the difficulty-aware weighted loss with its
//!   linear `gamma` schedule.
//! * [`model`] — the dual-stream classifier and its ablation wirings.
//! * [`optim`] — Adam.
//! * [`data`] — biased/unbiased synthetic two-task data, splits, CSV.
//! * [`metrics`] — accuracy, macro F1/recall/precision, macro one-vs-rest AUC.
//! * [`harness`] — training loop, evaluation, experiments, checkpoints.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;

pub use error::{LabError, Result};
