//! Chain-structured and tree-structured LSTMs with exact hand-derived
//! gradients, trainable with AdaGrad on tree-annotated corpora.
//!
//! The crate is organized around a small dense-numeric substrate
//! ([`tensor`]), tree file ingestion ([`trees`]), word-vector handling
//! ([`embeddings`]), the five composition architectures with their forward
//! and backward passes ([`cells`]), two task heads ([`heads`]), the training
//! loop ([`train`]), metrics ([`eval`]), and a finite-difference gradient
//! verification harness ([`gradcheck`]).

pub mod cells;
pub mod config;
pub mod embeddings;
pub mod eval;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod tensor;
pub mod train;
pub mod trees;

pub use config::{RunConfig, TaskKind, VariantKind};
pub use model::ModelParams;
pub use tensor::{Matrix, Rng, Vector};
pub use trees::{Tree, TreeKind};

/// Crate-wide error type. Variants group failures by origin so callers
/// (notably the CLI) can map them onto exit classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Tree(#[from] trees::TreeError),
    #[error(transparent)]
    Embedding(#[from] embeddings::EmbeddingError),
    #[error(transparent)]
    Cell(#[from] cells::CellError),
    #[error(transparent)]
    Head(#[from] heads::HeadError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] train::CheckpointError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
