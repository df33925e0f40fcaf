//! Dataset-conditioned neural architecture generation and ranking on the
//! NAS-Bench-201 cell space, at desk scale.
//!
//! The pipeline: encode a dataset (a set of labelled feature vectors) with a
//! hierarchical permutation-invariant set encoder into a Gaussian latent code,
//! decode architecture DAGs from latent samples with a GNN decoder that walks
//! nodes in topological order, and rank the candidates with a meta-learned
//! performance predictor. A synthetic task distribution with a known accuracy
//! oracle stands in for real image data so the whole loop is verifiable on a
//! laptop CPU.

pub mod decoder;
pub mod diag;
pub mod diffcore;
pub mod error;
pub mod generator;
pub mod graphenc;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod setenc;
pub mod space;
pub mod taskdb;
pub mod train;

pub use error::{Error, Result};
