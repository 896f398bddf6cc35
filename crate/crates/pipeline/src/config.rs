//! Optional JSON config file. Keys match the long CLI flags; flags given on
//! the command line win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::generate::MethodSelection;
use crate::PipelineError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub method: Option<MethodSelection>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub d_min: Option<u32>,
    pub d_max: Option<u32>,
    pub out_size: Option<u32>,
    pub window: Option<u32>,
    pub tolerance: Option<f64>,
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alphas: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub steps: Option<usize>,
    pub negatives: Option<usize>,
    pub shortcut_dim: Option<usize>,
    pub lr: Option<f64>,
    pub records: Option<PathBuf>,
    pub class_map: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
