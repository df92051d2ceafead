//! Trainable layers: linear reducers, GATv2 attention and the LSTM aggregator.

mod checkpoint;
mod gat;
mod linear;
mod lstm;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gat::{gatv2_forward, Aggregation, Coupling, EdgeList, GatLayer, GatOutput};
pub use linear::Linear;
pub use lstm::Lstm;
pub use params::{xavier_uniform, Bound, ParamId, ParamStore};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite recurrent state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("adjacency is {rows}×{cols} but the layer got {targets} targets and {sources} sources")]
    Adjacency {
        rows: usize,
        cols: usize,
        targets: usize,
        sources: usize,
    },
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
}
