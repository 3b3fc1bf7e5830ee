use std::path::PathBuf;

use crate::protocol::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("packet is not relayable (ttl exhausted or not a relayed type)")]
    NotRelayable,
    #[error("node {0} cannot start a discovery for itself")]
    InvalidDestination(NodeId),
    #[error("a discovery for {0} is already in progress")]
    DiscoveryInProgress(NodeId),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("scenario validation failed: {0}")]
    Validation(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("cannot compare an empty set of reports")]
    EmptyComparison,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input (scenario files, flags) rather than
    /// by a failure while running.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::UnknownScenario(_)
                | Error::Io { .. }
        )
    }
}
