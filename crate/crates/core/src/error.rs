use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine could not reach its accuracy contract.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// A system was too ill-conditioned to solve.
    #[error("singular system: condition number {cond:.3e} exceeds {limit:.1e}")]
    Singular { cond: f64, limit: f64 },

    /// Malformed or inconsistent input data.
    #[error("ingestion error{}: {msg}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Ingestion { row: Option<usize>, msg: String },

    /// An unresolvable or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged.
    #[error("training error at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn ingestion(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            row,
            msg: msg.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.record() as usize);
        Error::Ingestion {
            row,
            msg: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Ingestion {
            row: None,
            msg: e.to_string(),
        }
    }
}
