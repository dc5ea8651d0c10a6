use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        /// Field named by the diagnostic, when there is one.
        field: Option<String>,
        message: String,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("cannot emit {kind}: {reason}")]
    ShapeMismatch { kind: String, reason: String },

    #[error(transparent)]
    Core(#[from] nharq::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON output failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Wraps a JSON decoding failure with its position and, for missing or
    /// unknown keys, the offending field.
    pub fn parse(origin: &str, e: &serde_json::Error) -> Self {
        let message = e.to_string();
        let field = ["missing field `", "unknown field `", "duplicate field `"]
            .iter()
            .find_map(|marker| {
                let start = message.find(marker)? + marker.len();
                let len = message[start..].find('`')?;
                Some(message[start..start + len].to_string())
            });
        CliError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            field,
            message,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
