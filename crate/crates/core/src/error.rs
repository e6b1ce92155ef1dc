// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

use crate::qhl::TrainingRecord;

pub type Result<T, E = QmlaError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum QmlaError {
    #[error("cannot parse model `{input}`: unexpected token `{token}`")]
    Parse { input: String, token: String },

    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter vector has {got} entries but the model has {expected} terms")]
    Alignment { expected: usize, got: usize },

    #[error("invalid parameter value at index {index}: {value}")]
    NonFiniteParameter { index: usize, value: f64 },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("probability {0} lies outside [0, 1]")]
    Probability(f64),

    #[error("time {t} us outside recorded window [{min}, {max}] us")]
    OutOfRange { t: f64, min: f64, max: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("posterior weights collapsed at epoch {epoch}")]
    Collapse {
        epoch: usize,
        record: Option<Box<TrainingRecord>>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit did not converge (residual sum of squares {residual:e})")]
    FitFailed { residual: f64, residuals: Vec<f64> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QmlaError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        QmlaError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
