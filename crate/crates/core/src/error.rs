use std::io;
use std::path::PathBuf;

/// Everything that can go wrong inside the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0}: zero facts loaded")]
    ZeroFacts(String),

    #[error("invalid fact: {0}")]
    InvalidFact(String),

    #[error("invalid template for relation {relation}: {reason}")]
    InvalidTemplate { relation: String, reason: String },

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("prompt of {tokens} tokens exceeds backend limit of {limit}: {prompt:?}")]
    ContextLength {
        prompt: String,
        tokens: usize,
        limit: usize,
    },

    #[error("backend rejected request: {0}")]
    Backend(String),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("query ({subject}, {relation}): {source}")]
    Query {
        subject: String,
        relation: String,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Attach the identity of the triple being scored.
    pub fn for_query(self, subject: &str, relation: &str) -> Self {
        Error::Query {
            subject: subject.to_string(),
            relation: relation.to_string(),
            source: Box::new(self),
        }
    }

    /// Transport failures may succeed on a later attempt; everything else is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Query { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
