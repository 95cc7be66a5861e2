use std::path::PathBuf;

use klipa_core::agent::AgentError;
use klipa_core::extraction::ExtractionError;
use klipa_core::gateway::GatewayError;
use klipa_core::graph::GraphError;
use klipa_core::ingest::IngestError;
use klipa_core::metrics::MetricsError;
use klipa_core::retrieval::RetrievalError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_GATEWAY: i32 = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corpus {0} contains no parseable documents")]
    EmptyCorpus(PathBuf),
    #[error("missing artifact {0}; run build-kg and index first")]
    MissingArtifact(PathBuf),
    #[error("model gateway unreachable: {0}")]
    GatewayUnreachable(String),
    #[error("artifacts in {0} are locked by another build or index run")]
    Locked(PathBuf),
    #[error("bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl EngineError {
    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        EngineError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    /// 2 config, 3 missing or empty inputs, 4 gateway unreachable.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => EXIT_CONFIG,
            EngineError::Extraction(ExtractionError::Schema(_)) => EXIT_CONFIG,
            EngineError::Ingest(IngestError::FileNotFound(_)) => EXIT_CONFIG,
            EngineError::Gateway(GatewayError::FixtureParse(_)) => EXIT_CONFIG,
            EngineError::EmptyCorpus(_) | EngineError::MissingArtifact(_) => EXIT_INPUT,
            EngineError::Ingest(IngestError::EmptyCorpus(_)) => EXIT_INPUT,
            EngineError::GatewayUnreachable(_) => EXIT_GATEWAY,
            EngineError::Gateway(e) if e.is_unreachable() => EXIT_GATEWAY,
            EngineError::Retrieval(RetrievalError::Gateway(e)) if e.is_unreachable() => EXIT_GATEWAY,
            EngineError::Agent(AgentError::Gateway { error, .. }) if error.is_unreachable() => EXIT_GATEWAY,
            _ => EXIT_FAILURE,
        }
    }
}
