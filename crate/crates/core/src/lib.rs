//! Open-set watchlist recognition on precomputed embedding vectors.
//!
//! The pipeline: a compact adapter network is trained on top of frozen
//! upstream embeddings with a negative-aware loss (plain cross-entropy,
//! garbage class, entropic open-set, objectosphere, or maximal entropy).
//! Identity templates are enrolled by averaging normalized compact features,
//! probes are scored by cosine similarity against the templates, and a
//! rejection threshold turns the scores into open-set decisions evaluated
//! with TPIR/FPIR curves.

pub mod data;
pub mod error;
pub mod gallery;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod trainer;
pub mod util;

pub use error::{Error, ErrorClass, Result};
