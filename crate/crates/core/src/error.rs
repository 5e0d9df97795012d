use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates the dataset contract.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("patient {patient}: {message}")]
    Validation { patient: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient; aliased columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("no events in stratum {0}")]
    NoEvents(String),

    #[error("failed to converge after {iterations} iterations (last objective values: {:?})", &trace[trace.len().saturating_sub(3)..])]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("{category} intensity model: {source}")]
    Stratum {
        category: String,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error comes from input validation rather than a fit.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Csv(_)
        )
    }
}
