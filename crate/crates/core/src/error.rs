use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("day {date} has no ticks")]
    EmptyDay { date: chrono::NaiveDate },

    #[error("seasonal profile bucket {bucket} has no observations")]
    EmptyBucket { bucket: usize },

    #[error("seasonal profile is degenerate: bucket {bucket} has mean absolute value 0")]
    DegenerateProfile { bucket: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("no valid coefficients at scale {scale}")]
    EmptyScale { scale: f64 },

    #[error("Gaussian factorization failed: {0}")]
    Factorization(String),

    #[error("Newton iteration did not converge after {iterations} iterations (gradient max-norm {grad_norm:e})")]
    NewtonNonConvergence { iterations: usize, grad_norm: f64 },

    #[error(
        "optimizer did not converge after all restarts (best lambda={best_lambda}, sigma={best_sigma}, loglik={best_loglik})"
    )]
    FitNonConvergence {
        best_lambda: f64,
        best_sigma: f64,
        best_loglik: f64,
    },

    #[error("window {index} ({label}) is empty")]
    EmptyWindow { index: usize, label: String },

    #[error("segment {segment}: {source}")]
    Segment {
        segment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} ensemble members failed")]
    Ensemble { failed: usize, total: usize },

    #[error("quadrature oracle supports at most 4 observations, got {0}")]
    OracleTooLarge(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptyDay { .. }
                | Error::EmptyWindow { .. }
                | Error::OracleTooLarge(_)
                | Error::Csv(_)
        )
    }
}
