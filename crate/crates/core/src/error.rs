use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error("data error: {0}")]
    Data(String),

    /// A caller broke a precondition (e.g. passed a panel with missing cells
    /// to a routine that needs complete data).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration budget exceeded for individual {individual}: {cells} missing cells > {max}")]
    BudgetExceeded {
        individual: String,
        cells: usize,
        max: usize,
    },

    #[error("infeasible bridge: {0}")]
    InfeasibleBridge(String),

    #[error("degenerate weights for individual {0}: every replicate has zero probability")]
    DegenerateIndividual(String),

    #[error("initialization failed for outcome '{outcome}': {reason}")]
    Initialization { outcome: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
