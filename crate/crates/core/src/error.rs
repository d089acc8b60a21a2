use thiserror::Error;

use crate::model::KktCertificate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (non-numeric, non-finite, ragged, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The solver hit its iteration budget. Carries the best certificate seen.
    #[error("solver did not converge after {iterations} iterations: {message}")]
    NonConvergence {
        iterations: usize,
        message: String,
        certificate: Box<KktCertificate>,
    },

    /// A leave-one-out refit failed.
    #[error("refit excluding sample {index} failed: {source}")]
    Refit {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("asymptotic program did not converge: {message}")]
    AsymptoticNonConvergence { message: String, trace: Vec<[f64; 5]> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures that originate in an optimizer rather than in the inputs.
    pub fn is_convergence_failure(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::AsymptoticNonConvergence { .. } => true,
            Error::Refit { source, .. } => source.is_convergence_failure(),
            _ => false,
        }
    }
}
