//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants distinguish caller
//! mistakes (bad configuration, domain violations) from numerical breakdowns
//! the caller may want to handle (total particle depletion, degenerate
//! ensembles) and from I/O problems in the scenario layer.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state vector violated its invariants (non-finite entries, zero radius).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A configuration value violated a documented invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input lay outside an operation's mathematical domain
    /// (e.g. a non-elliptic orbit passed to a period computation).
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix factorization or solve failed beyond recovery
    /// (e.g. covariance not positive definite after maximum jitter).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every particle weight underflowed to zero during a likelihood update;
    /// the filter has diverged from the measurement.
    #[error("total particle depletion at t={t} s")]
    TotalDepletion { t: f64 },

    /// The ensemble has collapsed onto a single effective particle.
    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    /// Too few samples for the requested mixture complexity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The likelihood floor exceeds the density peak, so the retention set is empty.
    #[error("empty threshold set: likelihood floor {b} is at or above the density peak {peak}")]
    EmptyThresholdSet { b: f64, peak: f64 },

    /// Time series that must share an epoch grid do not.
    #[error("series alignment error: {0}")]
    Alignment(String),

    /// An error annotated with the decision epoch at which it occurred.
    #[error("at epoch t={t} s: {source}")]
    AtEpoch {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach epoch context to an error bubbling out of a tracker step.
    pub fn with_epoch(self, t: f64) -> Error {
        match self {
            already @ Error::AtEpoch { .. } => already,
            other => Error::AtEpoch { t, source: Box::new(other) },
        }
    }

    /// True for the filter-divergence conditions that mark a run as failed
    /// rather than aborting a whole batch.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::TotalDepletion { .. } | Error::DegenerateEnsemble(_) => true,
            Error::AtEpoch { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
