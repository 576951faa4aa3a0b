//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by construction, validation, and computation routines.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid score function: {0}")]
    InvalidScore(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("enumeration cap {cap} exceeded (needed {needed})")]
    CapExceeded { cap: u64, needed: u64 },

    #[error("no supported type: {0}")]
    NoSupport(String),

    #[error("policy table has no entry for the requested profile")]
    PolicyTableMiss,

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("score undefined at the requested point: {0}")]
    ScoreUndefined(String),
}

pub type Result<T> = std::result::Result<T, AuditError>;
