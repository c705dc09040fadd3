//! Desk-scale laboratory for one-shot clustered federated learning.
//!
//! Clients are simulated from incongruent data-generating processes, trained
//! locally with a small MLP, and monitored through the clustering temperature
//! (a scaled p-norm of the pairwise cosine-distance matrix of client
//! pseudo-gradients). The first non-decrease of the temperature triggers a
//! single clustering of the population with a pluggable backend.
//!
//! Module map:
//! - [`numkit`]: cosine geometry, divergence matrix, temperature trigger.
//! - [`model`]: MLP with manual gradients, client optimizers, FedOpt.
//! - [`datagen`]: synthetic data-generating processes and split regimes.
//! - [`clustering`]: K-Means, Mean Shift, Affinity Propagation, HDBSCAN,
//!   average-linkage agglomerative and the cosine bipartition.
//! - [`federation`]: OCFL orchestrator and the BNC/SCL/BCL baselines.
//! - [`metrics`]: RI/ARI, AMI, completeness, macro-F1, learning gap.
//! - [`xai`]: gradient-times-input saliency and insertion/deletion AUC.

pub mod clustering;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod seed;
pub mod xai;

pub use error::{Error, Result};
pub use exec::Exec;
