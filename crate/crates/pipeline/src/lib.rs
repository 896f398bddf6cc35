//! Batch negative generation over image trees, embedding analysis and toy
//! sweeps, as used by the `nsneg` binary.

pub mod commands;
pub mod config;
pub mod generate;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{accuracy_command, analyze_command, shape_bias_command, toy_command, AccuracyReport};
pub use config::FileConfig;
pub use generate::{generate_command, GenerateSummary, ManifestEntry, Method, MethodSelection, PipelineConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input directory {0} does not exist or is not a directory")]
    InputDirMissing(PathBuf),
    #[error("cannot write to {path}: {source}")]
    OutputNotWritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] nsneg_core::embedding_io::FormatError),
    #[error(transparent)]
    Analysis(#[from] nsneg_core::analysis::AnalysisError),
    #[error(transparent)]
    Train(#[from] nsneg_core::toy_trainer::TrainError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 2,
            _ => 1,
        }
    }
}
