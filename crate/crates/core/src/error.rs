use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing manifest: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("truncated binary {}: expected {expected} bytes, found {found}", .path.display())]
    TruncatedBinary {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("degenerate template: all pixels are zero")]
    DegenerateTemplate,

    #[error("no usable regions: every region has fewer than {min_size} members")]
    NoUsableRegions { min_size: usize },

    #[error("position sampling exhausted its retry budget of {budget} attempts at sample {index}")]
    RetryBudgetExhausted { index: usize, budget: usize },

    #[error("position is fully shadowed: no propagation path survives")]
    FullyShadowed,

    #[error("region {region} has no samples in the training split; try a different seed or split")]
    RegionMissingFromTrain { region: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("unknown baseline {0:?}")]
    UnknownBaseline(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Stable numeric code, shared by the CLI and the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::Domain(_) => 10,
            Error::DimensionMismatch(_) => 11,
            Error::MissingManifest(_) => 12,
            Error::MalformedManifest(_) => 13,
            Error::TruncatedBinary { .. } => 14,
            Error::MissingArtifact(_) => 15,
            Error::InvalidConfig(_) => 16,
            Error::DegenerateTemplate => 17,
            Error::NoUsableRegions { .. } => 18,
            Error::RetryBudgetExhausted { .. } => 19,
            Error::FullyShadowed => 20,
            Error::RegionMissingFromTrain { .. } => 21,
            Error::NonFiniteLoss { .. } => 22,
            Error::UnknownBaseline(_) => 23,
            Error::Io(_) => 30,
            Error::Json(_) => 31,
        }
    }
}
