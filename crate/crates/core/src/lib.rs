//! Joint spectral convolutional network for cross-domain recommendation.
//!
//! Each domain is a user–item bipartite graph. Stacked spectral convolutions
//! over the graph laplacian produce user and item latent vectors; users that
//! appear in several domains are tied together through a learned mapping
//! into a shared invariant space. The target domain is ranked by dot
//! product of its user and item vectors.

pub mod container;
pub mod data;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod runner;
pub mod training;

pub use error::{JscnError, Result};
