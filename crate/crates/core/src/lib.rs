//! Multi-scale speaker diarization library.
//!
//! The pipeline clusters a session at a fine temporal resolution while
//! measuring speaker affinity at several segment lengths at once:
//!
//! 1. segment the speech regions at multiple scales ([`segmenter`])
//! 2. compute per-scale cosine affinity matrices over base-segment pairs
//!    and min-max normalize them ([`affinity`])
//! 3. estimate fusion weights with a trained score-fusion network
//!    ([`nasf`]) or fall back to equal weights
//! 4. cluster the fused affinity matrix with normalized-maximum-eigengap
//!    spectral clustering ([`nmesc`])
//! 5. convert cluster labels to a speaker timeline and score it against
//!    the reference with DER ([`scorer`])
//!
//! [`synth`] generates reference annotations plus per-scale embeddings
//! with a duration-dependent noise model, so the whole pipeline can be
//! exercised without any audio or external embedding extractor.

pub mod affinity;
pub mod eigen;
pub mod embedding;
pub mod hungarian;
pub mod kmeans;
pub mod labels;
pub mod matrix;
pub mod nasf;
pub mod nmesc;
pub mod pipeline;
pub mod rttm;
pub mod scorer;
pub mod segmenter;
pub mod synth;

use thiserror::Error;

/// Errors produced by the diarization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rttm parse error at line {line}: {msg}")]
    RttmParse { line: usize, msg: String },

    #[error("invalid turn at line {line}: {msg}")]
    RttmInvalid { line: usize, msg: String },

    #[error("embedding archive format error: {0}")]
    EmbeddingFormat(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("degenerate session: {0}")]
    DegenerateSession(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("eigensolver failed to converge after {0} iterations")]
    EigenNoConvergence(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Milliseconds per second; all interval arithmetic is done on integer
/// milliseconds to keep timeline logic exact.
pub const MS_PER_SEC: i64 = 1000;

/// Convert seconds to integer milliseconds, rounding to nearest.
pub fn sec_to_ms(sec: f64) -> i64 {
    (sec * MS_PER_SEC as f64).round() as i64
}

/// Convert integer milliseconds to seconds.
pub fn ms_to_sec(ms: i64) -> f64 {
    ms as f64 / MS_PER_SEC as f64
}
