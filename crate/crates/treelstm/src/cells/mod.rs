//! Composition functions: the chain LSTM and both tree generalizations,
//! with forward traces and hand-derived backward passes.
//!
//! Five architectures are built from one gated step ([`step::step`]):
//! unidirectional and bidirectional chains (optionally stacked), the
//! child-sum tree cell, and the slot-addressed binary tree cell. Backward
//! passes consume the forward trace and accumulate parameter gradients into
//! a zeroed mirror of the parameter struct.

pub mod params;
pub mod sequence;
pub mod step;
pub mod tree;

pub use params::{CellKind, CellParams};
pub use sequence::{run_sequence, sequence_backward, ChainEncoder, SeqTrace};
pub use step::{lstm_step, step, step_backward, StepBack, StepTrace};
pub use tree::{run_tree, tree_backward, TreeTrace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("node has {got} children, cell allows at most {max}")]
    Arity { got: usize, max: usize },
    #[error("chain cell expects exactly one previous state, got {got}")]
    ChainArity { got: usize },
    #[error("chain cells cannot drive a tree traversal")]
    ChainOnTree,
    #[error("sequence input is empty")]
    EmptySequence,
    #[error("node {node} expected an input vector and none was provided")]
    MissingInput { node: usize },
}
