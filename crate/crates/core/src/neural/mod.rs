//! Small differentiable-numerics toolkit: dense matrices, a reverse-mode
//! tape, MLPs, grouped softmax, Adam and finite-difference checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use gradcheck::finite_diff_check;
pub use matrix::Matrix;
pub use mlp::Mlp;
pub use params::{Init, ParamEntry, ParamId, ParamStore};
pub use tape::{grouped_softmax_into, sigmoid, Tape, Var, Vjp};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("softmax group {0} is empty")]
    EmptyGroup(usize),
    #[error("softmax groups do not partition the indices (index {0})")]
    NotPartition(usize),
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("non-finite gradient at parameter {0}")]
    NonFinite(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
