use std::time::Duration;

use crate::model::PersonaId;
use crate::prompts::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can surface. Variants are grouped by the
/// subsystem that raises them; callers map them onto exit codes or HTTP
/// statuses via [`Error::class`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // repository connector
    #[error("malformed repository url: {0}")]
    MalformedUrl(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rate limited by host (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("repository has no readme")]
    NoReadme,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response from host: {0}")]
    HostResponse(String),

    // corpus
    #[error("nothing to analyze: no readme and no user-provided documents")]
    EmptyCorpus,

    // prompts and providers
    #[error("missing placeholder `{placeholder}` for stage {stage}")]
    MissingPlaceholder {
        stage: Stage,
        placeholder: &'static str,
    },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("could not parse {stage} output: {message}")]
    Parse { stage: Stage, message: String },

    // personas and mappings
    #[error("unknown persona {0}")]
    UnknownPersona(PersonaId),
    #[error("merge needs at least two distinct personas")]
    FewerThanTwo,
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid persona: {0}")]
    InvalidPersona(String),
    #[error("conflicting request: {0}")]
    ConflictingRequest(String),
    #[error("unknown issue #{0}")]
    UnknownIssue(u64),

    // store, jobs
    #[error("unknown repository {0}")]
    UnknownRepository(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("repository {0} already has a generation job in flight")]
    BusyRepository(String),
    #[error("stale version: expected {expected}, found {found}")]
    StaleVersion { expected: u64, found: u64 },
    #[error("storage error: {0}")]
    Storage(String),
}

/// Coarse failure classes shared by the HTTP API and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Upstream,
    Internal,
}

impl Error {
    pub fn parse(stage: Stage, message: impl Into<String>) -> Self {
        Error::Parse {
            stage,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            MalformedUrl(_)
            | InvalidPatch(_)
            | InvalidPersona(_)
            | InvalidParams(_)
            | FewerThanTwo
            | MissingPlaceholder { .. }
            | EmptyCorpus => ErrorClass::Validation,
            NotFound(_) | UnknownPersona(_) | UnknownIssue(_) | UnknownRepository(_)
            | UnknownJob(_) | NoReadme => ErrorClass::NotFound,
            ConflictingRequest(_) | BusyRepository(_) | StaleVersion { .. } => ErrorClass::Conflict,
            Provider(_) | Parse { .. } => ErrorClass::Provider,
            RateLimited { .. } | Transport(_) | HostResponse(_) => ErrorClass::Upstream,
            Storage(_) => ErrorClass::Internal,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Storage(e.to_string())
    }
}
