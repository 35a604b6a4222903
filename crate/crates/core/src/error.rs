use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("utterance of {duration_s} s is shorter than one {window_s} s window")]
    TooShort { duration_s: f64, window_s: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding row {0} has zero norm")]
    ZeroNormRow(usize),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("node {0} has non-positive degree")]
    NonPositiveDegree(usize),

    #[error("indicator vector is constant; no cut exists")]
    DegenerateCut,

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("embedding has {rows} rows but the manifest implies {windows} windows")]
    RowCountMismatch { rows: usize, windows: usize },

    #[error("speakers present in both training and evaluation data: {0:?}")]
    SpeakerOverlap(Vec<String>),

    #[error("loss became non-finite at epoch {epoch}, batch {batch} (learning rate {learning_rate:e})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("all points are identical; no 2-clustering exists")]
    IdenticalPoints,

    #[error("evaluation set contains no ground-truth segments")]
    EmptyEvaluation,

    #[error("unknown clip id {0}")]
    UnknownClip(String),

    #[error("clip {0} has no ground-truth annotation")]
    MissingGroundTruth(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
