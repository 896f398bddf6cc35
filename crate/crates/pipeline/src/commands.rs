//! `analyze`, `toy`, `shape-bias` and `accuracy`.

use std::fs;
use std::path::Path;

use nsneg_core::analysis::{
    coarse_finer_accuracy, per_class_accuracy, read_class_map, read_label_records, read_stimulus_records,
    shape_bias, similarity_summary, write_json, CoarseFinerAccuracy, PerClassAccuracy, ShapeBiasReport,
    SimilaritySummary,
};
use nsneg_core::embedding_io::read_embeddings;
use nsneg_core::toy_trainer::{run_sweep, write_sweep_csv, SweepRow, ToyDataConfig, TrainConfig};
use serde::Serialize;

use crate::PipelineError;

/// Similarity histogram of row-paired embeddings in `a` and `b`, written as JSON.
pub fn analyze_command(a: &Path, b: &Path, out: &Path) -> Result<SimilaritySummary, PipelineError> {
    let ea = read_embeddings(a)?;
    let eb = read_embeddings(b)?;
    let summary = similarity_summary(&ea, &eb)?;
    write_json(out, &summary)?;
    Ok(summary)
}

/// Trains every `(alpha, seed)` cell and writes the rows as CSV.
pub fn toy_command(
    alphas: &[f64],
    seeds: &[u64],
    data: &ToyDataConfig,
    base: &TrainConfig<f64>,
    out: &Path,
) -> Result<Vec<SweepRow>, PipelineError> {
    if alphas.is_empty() {
        return Err(PipelineError::Usage("sweep needs at least one alpha".into()));
    }
    if seeds.is_empty() {
        return Err(PipelineError::Usage("sweep needs at least one seed".into()));
    }
    let rows = run_sweep(alphas, seeds, data, base)?;
    write_sweep_csv(&rows, fs::File::create(out)?)?;
    Ok(rows)
}

pub fn shape_bias_command(records: &Path, out: &Path) -> Result<ShapeBiasReport, PipelineError> {
    let report = shape_bias(&read_stimulus_records(records)?)?;
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_class: PerClassAccuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_finer: Option<CoarseFinerAccuracy>,
}

/// Per-class accuracy of `(predicted, label)` records, plus coarse/finer
/// accuracy when a finer-to-coarse class map is given.
pub fn accuracy_command(records: &Path, class_map: Option<&Path>, out: &Path) -> Result<AccuracyReport, PipelineError> {
    let (predicted, labels) = read_label_records(records)?;
    let per_class = per_class_accuracy(&predicted, &labels)?;
    let coarse_finer = match class_map {
        Some(path) => Some(coarse_finer_accuracy(&predicted, &labels, &read_class_map(path)?)?),
        None => None,
    };
    let report = AccuracyReport { per_class, coarse_finer };
    write_json(out, &report)?;
    Ok(report)
}
