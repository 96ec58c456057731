//! Minimal reverse-mode differentiation over static dense graphs.
//!
//! A [`Graph`] records matrix-valued nodes in topological order. Gradients
//! are built symbolically as additional nodes, so the gradient graph can be
//! differentiated again: Hessian-vector and mixed-partial-vector products
//! are gradients of `⟨∇f, v⟩`. All arithmetic is `f64`.

mod eval;
mod graph;
pub mod nn;
mod params;

pub use eval::Workspace;
pub use graph::{Graph, InputSlot, NodeId, ProductHandle, SegmentGrad};
pub use params::{Layout, LayoutBuilder, ParameterVector, SegmentSpec, TensorSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("input `{slot}` expects {expected} values, got {got}")]
    InputShape { slot: String, expected: usize, got: usize },
    #[error("graph takes {expected} inputs, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("output is {rows}x{cols}; a scalar output is required")]
    NonScalar { rows: usize, cols: usize },
    #[error("graph has no output node")]
    NoOutput,
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("segment `{segment}` has no tensor `{tensor}`")]
    UnknownTensor { segment: String, tensor: String },
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("parameter layout does not match the graph")]
    LayoutMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("workspace used before binding parameters")]
    Unbound,
}

#[cfg(test)]
mod tests;
