use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum JscnError {
    #[error("isolated vertex: {0}")]
    IsolatedVertex(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("graph too large for dense spectrum: N = {n} exceeds cap {cap}")]
    GraphTooLarge { n: usize, cap: usize },

    #[error("eigensolver did not converge after {iterations} iterations (residual norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no negative items for user {0}")]
    NoNegativeItems(usize),

    #[error("NaN in gradient of {0}")]
    NanGradient(String),

    #[error("loss became NaN at epoch {epoch} (in-domain {in_domain:?}, cross {cross}, reg {reg})")]
    NanLoss {
        epoch: usize,
        in_domain: Vec<f64>,
        cross: f64,
        reg: f64,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dataset eliminated by filtering")]
    EliminatedByFiltering,

    #[error("test set would be empty for user {0}")]
    EmptyTestSet(String),

    #[error("user {0} has too few edges to split into train and test")]
    TooFewEdges(String),

    #[error("synthetic domain {0} eliminated by filtering; increase edge_probability_scale or edge_bias")]
    SyntheticEliminated(usize),

    #[error("no evaluable users")]
    NoEvaluableUsers,

    #[error("empty relevant set")]
    EmptyRelevant,

    #[error("bad container {path}: {msg}")]
    Container { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl JscnError {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            JscnError::NoConvergence { .. } | JscnError::NanGradient(_) | JscnError::NanLoss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, JscnError>;

/// Attaches the path to an I/O error.
pub fn file_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> JscnError + '_ {
    move |source| JscnError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, got: impl ToString) -> JscnError {
    JscnError::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
