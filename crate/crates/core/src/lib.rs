//! Uncertainty-aware optimal transport for semantically coherent OOD
//! detection on small vector datasets.
//!
//! The pipeline alternates between training a small network on labeled and
//! unlabeled data and re-assigning pseudo-labels with energy-weighted
//! Sinkhorn transport:
//!
//! - [`transport`]: energies, marginals, energy-weighted cost, Sinkhorn solver.
//! - [`assignment`]: dataset state, cluster class rates, promotion, k-means baseline.
//! - [`scoring`]: MSP / energy / T-energy scores and detection metrics.
//! - [`learner`]: network, losses, optimizer, memory queue, training loop.
//! - [`data`]: synthetic dataset generation and CSV/JSON I/O.
//! - [`config`]: flat `key = value` run configuration.

pub mod assignment;
pub mod config;
pub mod data;
pub mod error;
pub mod learner;
pub mod numeric;
pub mod scoring;
pub mod transport;

pub use error::{Error, Result};
