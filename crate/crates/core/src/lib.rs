//! Graph convolutional networks whose aggregation operators are learned
//! together with the convolution filters.
//!
//! The free parameters `{Â_k}` pass through a constraint pipeline
//! ([`reparam::constrain`]) that can impose column stochasticity, symmetry
//! and entrywise orthogonality (crispmax). The resulting context matrices
//! `{A_k}` drive a single graph-convolution block ([`gcn`]) trained by
//! momentum SGD ([`train`]). Handcrafted and masked power-map baselines live
//! in [`baselines`]; skeleton ingestion, temporal chunking and a synthetic
//! task live in [`data`]. [`oracle`] holds slow reference implementations
//! used for testing.

pub mod baselines;
pub mod basis;
pub mod data;
pub mod error;
pub mod gcn;
pub mod matrix;
pub mod oracle;
pub mod reparam;
pub mod train;

pub use basis::{AdjacencyBasis, ConstraintKind, ConstraintSpec, FreeBasis, Mask};
pub use error::{Error, Result};
pub use gcn::{Activation, ConvFilterBank, LayerOutput};
pub use matrix::{Matrix, NodeSignal};
pub use reparam::CrispmaxConfig;
