use thiserror::Error;

/// Errors raised by tree construction, solvers and checkers.
#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iteration limit reached after {iterations} iterations (last residual {residual:e}){context}")]
    IterationLimit {
        iterations: usize,
        residual: f64,
        context: String,
    },

    #[error("non-finite value at level {level}, node {node}")]
    NonFinite { level: usize, node: usize },

    #[error("singular matrix at level {level}, node {node} (|det| = {det:e})")]
    Singular { level: usize, node: usize, det: f64 },

    #[error("condition violated: {what} (left-hand side {lhs})")]
    Condition { what: String, lhs: f64 },

    #[error("undefined input: {0}")]
    Undefined(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl BsdeError {
    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            BsdeError::Sizing(_)
                | BsdeError::Contract(_)
                | BsdeError::Config(_)
                | BsdeError::Undefined(_)
                | BsdeError::Io(_)
                | BsdeError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BsdeError>;
