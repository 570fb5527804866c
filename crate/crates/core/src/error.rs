use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("spawn error: {0}")]
    Spawn(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("feature error: {0}")]
    Feature(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("incompatible format: {0}")]
    Incompatible(String),
    #[error("integrity error at tick {tick}: {detail}")]
    Integrity { tick: usize, detail: String },
    #[error("agent error: {0}")]
    Agent(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Maps serde failures onto the parse/validation split: malformed text is a
    /// parse error, well-formed text with the wrong shape is a validation error.
    pub(crate) fn from_json(what: &str, e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => Error::Validation(format!("{what}: {e}")),
            _ => Error::Parse(format!("{what}: {e}")),
        }
    }
}
