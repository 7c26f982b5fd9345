use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} (layer {layer})")]
    NonFinite { what: &'static str, layer: usize },

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("rotor {rotor} would need negative squared speed {value}")]
    Saturation { rotor: usize, value: f64 },

    #[error("simulation diverged at t={t:.3}s: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("empty window")]
    EmptyWindow,

    #[error("log schema mismatch: column `{column}`")]
    Schema { column: String },

    #[error("axis mismatch between summaries: {0}")]
    AxisMismatch(String),

    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
