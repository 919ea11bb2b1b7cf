use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cluster shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("stale solver state: {0}")]
    StaleState(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("oracle capacity exceeded: exact enumeration supports at most {max} GPUs, got {got}")]
    Capacity { max: usize, got: usize },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("LP solver failed: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
