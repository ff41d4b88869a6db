use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulation, estimation and learning stack.
#[derive(Debug, Error)]
pub enum FalconError {
    /// A value fell outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A yaw encoding with (near) zero norm cannot be decoded.
    #[error("degenerate yaw encoding (norm {0:.3e})")]
    DegenerateEncoding(f64),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// A forward pass produced a non-finite activation.
    #[error("non-finite activation in layer {layer}")]
    Inference { layer: String },

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed artifact on disk.
    #[error("format error: {0}")]
    Format(String),

    /// An input produced by an earlier pipeline stage is absent.
    #[error("missing artifact {path}; run the stage that produces it first")]
    MissingArtifact { path: PathBuf },

    /// A pipeline stage failed; `source` carries the diagnostics.
    #[error("stage '{stage}' failed")]
    Stage {
        stage: String,
        #[source]
        source: Box<FalconError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FalconError>;
