//! Learning compact binary codes for tagged image collections.
//!
//! Codes are learned by combining visual similarity preservation (anchor
//! graph), direct regression of codes on denoised tags, and indirect transfer
//! through an image-concept hypergraph, optimized with a discrete augmented
//! Lagrangian solver. A linear hash function encodes unseen samples, a
//! bit-packed Hamming index ranks them, and MAP / precision-recall measure the
//! result.

pub mod alm;
pub mod anchorgraph;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod hashmodel;
pub mod hypergraph;
pub mod kmeans;
pub mod pipeline;
pub mod retrieval;

pub use alm::{train, AlmSolver, AlmState, TrainParams, TrainResult, Variant};
pub use anchorgraph::{build_anchor_graph, AnchorGraph};
pub use dataio::{Dataset, DenseMatrix, SparseBinaryMatrix, SynthConfig};
pub use error::{Error, Result};
pub use hashmodel::{FeatureModel, HashModel, PackedCodes};
pub use hypergraph::{build_hypergraph, Hypergraph};
pub use retrieval::HammingIndex;
