use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] airdrop_core::Error),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("cannot parse {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("simulation diverged at t = {t:.3} s: {state}")]
    Diverged { t: f64, state: String },
}

impl SimError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
