use thiserror::Error;

use crate::batch::ClusterPartition;
use crate::sequential::CampaignResult;

/// Errors produced by the design, modeling and campaign layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no candidate points remain after excluding the current design")]
    EmptyCandidates,

    /// Cluster selection could not form enough clusters even at the smallest
    /// box-count threshold. The partial partition is kept for the caller.
    #[error("only {} of {wanted} clusters formed at alpha = 1", partial.clusters.len())]
    InsufficientClusters {
        wanted: usize,
        partial: Box<ClusterPartition>,
    },

    #[error("objective evaluation failed at {point:?}: {reason}")]
    Objective { point: Vec<f64>, reason: String },

    /// A campaign stopped early. `partial` holds the trace up to the failure.
    #[error("campaign failed after {completed_rounds} rounds: {source}")]
    Campaign {
        completed_rounds: usize,
        #[source]
        source: Box<Error>,
        partial: Box<CampaignResult>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Innermost cause, looking through campaign wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Campaign { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
