use thiserror::Error;

use crate::envs::StateId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {0} is not part of the environment")]
    InvalidState(StateId),
    #[error("action {action} is out of range (environment has {count} actions)")]
    InvalidAction { action: usize, count: usize },
    #[error("task constraint cannot be satisfied: {0}")]
    UnsatisfiableConstraint(String),
    #[error("task from {from} to {to} is not solvable")]
    Unsolvable { from: StateId, to: StateId },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
