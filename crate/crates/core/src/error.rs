use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Variants split into two families that the CLI maps onto distinct exit
/// codes: validation problems with the inputs (schema, references,
/// preconditions) and environmental failures (file system, network).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: invalid JSON: {source}")]
    Json {
        location: String,
        #[source]
        source: serde_json::Error,
    },

    /// A required field is missing or has the wrong shape.
    #[error("{location}: schema error: {message}")]
    Schema { location: String, message: String },

    /// An identifier points at something that does not exist.
    #[error("referential integrity: {0}")]
    Reference(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient corpus: {needed} images requested but only {available} eligible")]
    InsufficientCorpus { needed: usize, available: usize },

    /// A ratio has no defined value (no qualifying denominator).
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error(
        "answer coverage: {}",
        describe_coverage(missing, duplicate, unexpected)
    )]
    Coverage {
        missing: Vec<String>,
        duplicate: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("fingerprint mismatch: probe {probe} vs answers {answers}")]
    FingerprintMismatch { probe: String, answers: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transport: {0}")]
    Transport(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures of the environment rather than of the inputs.
    pub fn is_environmental(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Transport(_))
    }
}

fn describe_coverage(missing: &[String], duplicate: &[String], unexpected: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut parts = Vec::new();
    for (label, refs) in [
        ("missing", missing),
        ("duplicate", duplicate),
        ("unexpected", unexpected),
    ] {
        if refs.is_empty() {
            continue;
        }
        let mut listed = refs
            .iter()
            .take(SHOWN)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        if refs.len() > SHOWN {
            listed.push_str(&format!(", ... ({} more)", refs.len() - SHOWN));
        }
        parts.push(format!("{} {label} [{listed}]", refs.len()));
    }
    parts.join("; ")
}
