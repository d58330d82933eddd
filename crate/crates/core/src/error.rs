use alloc::string::String;
use alloc::vec::Vec;

use crate::training::GridRow;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown corpus format `{0}` (expected amazon or yelp)")]
    UnknownFormat(String),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("user index {user} out of range ({num_users} users)")]
    UserOutOfRange { user: usize, num_users: usize },

    #[error("item index {item} out of range ({num_items} items)")]
    ItemOutOfRange { item: usize, num_items: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("vector length {got} does not match embedding dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("every grid cell failed ({} runs)", .0.len())]
    AllRunsFailed(Vec<GridRow>),

    #[error("top_n must be at least 1")]
    InvalidTopN,
}
