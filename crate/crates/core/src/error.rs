use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("measurement index {index} out of range for sensor {sensor} (have {available})")]
    Index {
        sensor: usize,
        index: i32,
        available: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampler invariant violated: {0}")]
    Invariant(String),

    #[error("state space too large to enumerate: at least {count} histories (limit {limit})")]
    StateSpaceOverflow { count: u64, limit: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
