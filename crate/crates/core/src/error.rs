use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },

    #[error("backward: root must hold exactly one element, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("{0}: variable belongs to a different tape")]
    ForeignVar(&'static str),

    #[error("candidate {index} produced a non-finite loss ({value})")]
    NonFiniteLoss { index: usize, value: f64 },

    #[error("hyperparameters have no path to the validation loss; check the problem wiring")]
    NoHyperPath,

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("malformed CSV at row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
