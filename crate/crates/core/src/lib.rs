//! Weakly-supervised dysfluency segmentation by constrained spectral
//! partitioning of window-embedding graphs.
//!
//! A clip is cut into overlapping windows, one embedding per window. Windows
//! become graph nodes joined by cosine similarity; a weakly supervised
//! classifier, queried with Monte Carlo dropout, contributes a second
//! similarity that is blended in where the classifier is confident. The
//! Fiedler vector of the fused graph's normalized Laplacian splits the nodes
//! in two, the classifier picks the dysfluent side, and runs of dysfluent
//! windows become time segments.

pub mod baselines;
pub mod boundary;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod similarity;
pub mod spectral;
pub mod store;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
