//! Neural side of the lab: a word-level tokenizer, a small post-norm
//! transformer encoder with hand-written backpropagation, the splice that
//! feeds a unification encoder's query states into a frozen fact checker,
//! and the training loops for the fact checker, the composed model and the
//! end-to-end baseline.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod splice;
pub mod trainer;
pub mod vocab;

pub use params::{EncoderConfig, EncoderParams};
pub use vocab::{tokenize, TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("sequence of {len} tokens exceeds the maximum length {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("bad input: {0}")]
    Input(String),
    #[error("wiring error: {0}")]
    Wiring(String),
    #[error("refusing to update a frozen encoder")]
    Frozen,
    #[error("the fact checker must be frozen before training the unifier")]
    NotFrozen,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl NeuralError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        NeuralError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
