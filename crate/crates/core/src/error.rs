use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the decomposition pipeline.
#[derive(Debug, Error)]
pub enum GcpError {
    #[error("index error: {0}")]
    Index(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("loss domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "zero sampling exhausted {rejects} rejections (nonzero density {density:.6}); \
         use fewer zero samples or set them to 0 for dense data"
    )]
    Sampling { rejects: u64, density: f64 },

    #[error("objective diverged at slice {slice}: {detail}")]
    Divergence { slice: usize, detail: String },

    #[error("singular linear system: {0}; try a positive weight regularization (mu > 0)")]
    LinearSolve(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("slice {slice}: {source}")]
    AtSlice {
        slice: usize,
        #[source]
        source: Box<GcpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GcpError {
    /// Attach the stream position to an error raised while processing a slice.
    pub fn at_slice(self, slice: usize) -> Self {
        match self {
            e @ (GcpError::AtSlice { .. } | GcpError::Divergence { .. }) => e,
            other => GcpError::AtSlice {
                slice,
                source: Box::new(other),
            },
        }
    }

    /// True if the root cause is numerical divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            GcpError::Divergence { .. } => true,
            GcpError::AtSlice { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            GcpError::Index(_) => "index",
            GcpError::Shape(_) => "shape",
            GcpError::InvalidTensor(_) => "invalid-tensor",
            GcpError::Domain(_) => "domain",
            GcpError::Precondition(_) => "precondition",
            GcpError::Sampling { .. } => "sampling",
            GcpError::Divergence { .. } => "divergence",
            GcpError::LinearSolve(_) => "linear-solve",
            GcpError::Parse { .. } => "parse",
            GcpError::Generation(_) => "generation",
            GcpError::Contract(_) => "contract",
            GcpError::Checkpoint(_) => "checkpoint",
            GcpError::AtSlice { source, .. } => source.kind(),
            GcpError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, GcpError>;
