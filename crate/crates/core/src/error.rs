use thiserror::Error;

use crate::forest::NodeHandle;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: matrix is not positive definite after jitter")]
    NotPositiveDefinite { context: &'static str },

    #[error("{context}: non-finite value")]
    NonFinite { context: &'static str },

    #[error("handle {0:?} does not refer to a live node")]
    DeadHandle(NodeHandle),

    #[error("nodes {0:?} and {1:?} belong to different trees")]
    DifferentTrees(NodeHandle, NodeHandle),

    #[error("cannot observe a variable that already has a concrete value")]
    ObserveConcrete,

    #[error("cycle detected among nodes of a tree description")]
    Cycle,

    #[error("unknown variable {0}")]
    UnknownVariable(usize),

    #[error("every particle has zero weight at step {step}")]
    DegenerateCloud { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
