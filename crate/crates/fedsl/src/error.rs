//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors (or a vector and a model) disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation needed at least one sample.
    #[error("dataset is empty: {context}")]
    EmptyDataset { context: String },

    /// Requested batch cannot be drawn from the dataset.
    #[error("batch size {batch} exceeds dataset size {available}")]
    BatchSize { batch: usize, available: usize },

    /// A label is outside the declared class range.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    /// The requested partition cannot be satisfied.
    #[error("infeasible partition: {reason}")]
    InfeasiblePartition { reason: String },

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// A diagnostic was requested but not recorded for this round.
    #[error("diagnostics not enabled: {context}")]
    DiagnosticsDisabled { context: String },

    /// Trace files disagree in a way that prevents comparison.
    #[error("report input mismatch: {reason}")]
    ReportMismatch { reason: String },

    /// Malformed trace or dataset file.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.to_string(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
