use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("batch norm: {0}")]
    BatchNorm(String),

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("{origin}:{line}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset {}: {msg}", path.display())]
    Dataset { path: PathBuf, msg: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("target {target} at batch index {index} is out of range for {classes} classes")]
    InvalidTarget {
        index: usize,
        target: usize,
        classes: usize,
    },

    #[error("probe: {0}")]
    Probe(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Prefixes a non-finite error with the layer that produced it.
    pub fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::NonFinite { op } => Error::NonFinite {
                op: format!("{layer}/{op}"),
            },
            other => other,
        }
    }
}
