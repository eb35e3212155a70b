//! GNN inference engine with LASSO-based input-channel pruning.
//!
//! The crate covers the whole path from a trained multi-branch GNN to a
//! smaller deployable one:
//!
//! * [`graph`]: CSR graphs, normalized adjacency, sparse-dense products.
//! * [`tensor`]: deterministic dense kernels.
//! * [`model`]: the multi-branch layer stack, mask folding and GNM1 files.
//! * [`train`]: full-batch training, re-training and F1-micro.
//! * [`prune`]: per-layer LASSO channel selection and the pruning schemes.
//! * [`infer`]: full and batched inference with a hidden-feature cache.
//! * [`cost`]: analytic MAC/memory estimates.

pub mod error;
pub mod cost;
pub mod graph;
pub mod instrument;
pub mod model;
pub mod optim;
pub mod infer;
pub mod prune;
pub mod seeds;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
