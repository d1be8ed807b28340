use thiserror::Error;

use crate::crypto::hash::Digest;

/// A configuration problem, reported with the path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("serial {serial} already holds a different block")]
    ConflictingEntry { serial: u64 },
    #[error("datablock {0} referenced by a confirmed block is not available")]
    UnresolvedDatablock(Digest),
    #[error("requested prefix up to {upto} exceeds executed prefix {executed}")]
    BeyondExecuted { upto: u64, executed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("need {needed} distinct valid shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares cover more than one message digest")]
    MixedDigests,
    #[error("need {needed} chunks, got {got}")]
    InsufficientChunks { needed: usize, got: usize },
    #[error("chunks are inconsistent: {0}")]
    InconsistentChunks(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("the run confirmed no requests")]
    NoConfirmations,
}
