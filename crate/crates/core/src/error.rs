use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The data cannot support the requested fit (e.g. no events).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("subject {index}: {source}")]
    Subject {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {source}")]
    BootstrapExhausted {
        replicate: usize,
        attempts: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: column `{column}`: {message}")]
    Parse {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{0}")]
    Schema(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Config(_)
            | Error::Csv(_)
            | Error::Io(_) => true,
            Error::Subject { source, .. }
            | Error::Replication { source, .. }
            | Error::BootstrapExhausted { source, .. } => source.is_input_error(),
            Error::DegenerateData(_) | Error::SingularInformation(_) | Error::SingularDesign(_) => {
                false
            }
        }
    }
}
