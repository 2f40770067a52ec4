use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by data ingestion, model fitting, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("row {row}: malformed row: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: invariant violation: {message}")]
    InvariantViolation { row: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("singular {what}")]
    Singular { what: &'static str },

    #[error("singular pseudo-Hessian")]
    SingularHessian,

    #[error("empty risk set at t = {time}")]
    EmptyRiskSet { time: f64 },

    #[error("{stage} did not converge after {iterations} iterations (residual norm {norm:.3e})")]
    NoConvergence {
        stage: &'static str,
        iterations: usize,
        norm: f64,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input data rather than numerical failure.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io(_)
            | Error::Csv(_)
            | Error::EmptyDataset
            | Error::MalformedRow { .. }
            | Error::InvariantViolation { .. }
            | Error::MissingColumn(_)
            | Error::UnknownColumn(_)
            | Error::Invalid(_) => true,
            Error::Stage { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
