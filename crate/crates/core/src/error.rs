use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("token id {id} at position {position} is outside a vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, position: usize, vocab: usize },

    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("every position is padding")]
    AllPadding,

    #[error("{name} = {value} is outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },

    #[error("distribution row {row} sums to {sum}, not 1")]
    NotNormalized { row: usize, sum: f64 },

    #[error("line count mismatch: {src_lines} source lines vs {tgt_lines} target lines")]
    LineCountMismatch { src_lines: usize, tgt_lines: usize },

    #[error("sentence {index} has {len} tokens, more than max_tokens {max_tokens}")]
    SentenceTooLong { index: usize, len: usize, max_tokens: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("ragged input: {0}")]
    Ragged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token:?} is not in the {side} vocabulary")]
    OutOfVocabulary { token: String, side: &'static str },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
