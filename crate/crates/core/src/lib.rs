//! Learning from label proportions (LLP) with belief-propagation pseudo-labels.
//!
//! Only bag-level positive counts are observed for training instances. The
//! pipeline recovers instance pseudo-labels by running sum-product belief
//! propagation on an Ising model that combines bag-count penalties with
//! k-nearest-neighbour similarity penalties, then fits an MLP with an
//! instance head and a pooled bag head, and optionally repeats the process on
//! the learned embeddings.
//!
//! Module map:
//!
//! - [`data`]: feature matrices, CSV ingestion, splits, synthetic data
//! - [`bagging`]: random disjoint bags, bag counts, Gaussian-mechanism noise
//! - [`knn`]: distances, kernels, exact thresholded kNN graphs
//! - [`gibbs`]: node and pairwise potentials of the Ising model
//! - [`bp`]: sum-product / max-product BP and convergence diagnostics
//! - [`pseudo`]: thresholding marginals into training targets
//! - [`mlp`]: dense network, bag head, losses, Adam training
//! - [`pipeline`]: the iterative refinement loop and the DLLP baseline
//! - [`metrics`]: AUROC and kNN label agreement

// parameter checks are written `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bagging;
pub mod bp;
pub mod config;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod knn;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod pseudo;
pub(crate) mod rng;

pub use error::{LlpError, Result};
