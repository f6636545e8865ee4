use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure to read or interpret one of the pipeline's input files.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
}

impl InputError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        InputError::Io { path: path.to_path_buf(), source }
    }

    pub fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        InputError::Invalid { what, msg: msg.into() }
    }
}
