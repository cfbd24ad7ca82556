//! IO and orchestration around `hcmen-core`: the on-disk dataset layout,
//! synthetic data generation, the checkpoint format, the training loop and
//! evaluator, the gradient-check suite, and scan benchmarking. The `hcmen`
//! binary exposes all of it as subcommands.

pub mod bench;
pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod synth;
pub mod trainer;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HcmenError {
    #[error(transparent)]
    Core(#[from] hcmen_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

impl HcmenError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HcmenError>;
