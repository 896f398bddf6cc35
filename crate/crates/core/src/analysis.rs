//! Similarity histograms, cue-conflict shape bias, coarse/finer accuracy and
//! per-class accuracy.
//!
//! Means are accumulated left to right in `f64` so results do not depend on
//! thread count.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;
use crate::scalar::Scalar;

pub type ClassId = u32;

pub const SIMILARITY_BINS: usize = 100;
pub const ACCURACY_BINS: usize = 40;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("no record matched either the shape or the texture label")]
    NoDecisions,
    #[error("class {0} has no coarse mapping")]
    UnmappedClass(ClassId),
    #[error("record {0}: shape and texture labels must differ")]
    NotCueConflict(usize),
    #[error("malformed record file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Dot product of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity<S: Scalar>(a: &Embedding<S>, b: &Embedding<S>) -> Result<f64, AnalysisError> {
    if a.dim() != b.dim() {
        return Err(AnalysisError::DimMismatch(a.dim(), b.dim()));
    }
    Ok(a.dot(b).as_f64().clamp(-1.0, 1.0))
}

/// Uniform histogram with `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins > 0 && hi > lo);
        let width = (hi - lo) / bins as f64;
        Self {
            bin_edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            counts: vec![0; bins],
        }
    }

    /// Adds `v`; the top edge belongs to the last bin, values outside clamp.
    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let (lo, hi) = (self.bin_edges[0], self.bin_edges[bins]);
        let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
        let idx = if pos.is_nan() { 0 } else { (pos.max(0.0) as usize).min(bins - 1) };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub n: u64,
}

/// Cosine similarity of each `(queries[i], paired[i])`, histogrammed into
/// 100 bins over `[-1, 1]`.
pub fn similarity_summary<S: Scalar>(
    queries: &[Embedding<S>],
    paired: &[Embedding<S>],
) -> Result<SimilaritySummary, AnalysisError> {
    if queries.len() != paired.len() {
        return Err(AnalysisError::LengthMismatch(queries.len(), paired.len()));
    }
    if queries.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut hist = Histogram::uniform(-1.0, 1.0, SIMILARITY_BINS);
    let mut sum = 0.0;
    for (q, p) in queries.iter().zip(paired) {
        let s = cosine_similarity(q, p)?;
        hist.add(s);
        sum += s;
    }
    let n = queries.len() as u64;
    Ok(SimilaritySummary {
        bin_edges: hist.bin_edges,
        counts: hist.counts,
        mean: sum / n as f64,
        n,
    })
}

/// One cue-conflict stimulus: prediction plus the shape and texture labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub predicted: ClassId,
    pub shape_label: ClassId,
    pub texture_label: ClassId,
}

impl StimulusRecord {
    pub fn new(predicted: ClassId, shape_label: ClassId, texture_label: ClassId) -> Option<Self> {
        (shape_label != texture_label).then_some(Self {
            predicted,
            shape_label,
            texture_label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeBiasReport {
    /// Shape decisions over shape plus texture decisions.
    pub shape_bias: f64,
    /// Shape decisions over all records.
    pub shape_accuracy: f64,
    /// Texture decisions over all records.
    pub texture_accuracy: f64,
    pub shape_decisions: u64,
    pub texture_decisions: u64,
    pub total: u64,
}

/// Shape bias on cue-conflict stimuli. Records matching neither label are
/// left out of the bias denominator but count toward the accuracies.
pub fn shape_bias(records: &[StimulusRecord]) -> Result<ShapeBiasReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if let Some(i) = records.iter().position(|r| r.shape_label == r.texture_label) {
        return Err(AnalysisError::NotCueConflict(i));
    }
    let shape = records.iter().filter(|r| r.predicted == r.shape_label).count() as u64;
    let texture = records.iter().filter(|r| r.predicted == r.texture_label).count() as u64;
    if shape + texture == 0 {
        return Err(AnalysisError::NoDecisions);
    }
    let total = records.len() as u64;
    Ok(ShapeBiasReport {
        shape_bias: shape as f64 / (shape + texture) as f64,
        shape_accuracy: shape as f64 / total as f64,
        texture_accuracy: texture as f64 / total as f64,
        shape_decisions: shape,
        texture_decisions: texture,
        total,
    })
}

/// Total map from finer class ids to coarse class ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap(pub BTreeMap<ClassId, ClassId>);

impl ClassMap {
    pub fn coarse(&self, finer: ClassId) -> Result<ClassId, AnalysisError> {
        self.0
            .get(&finer)
            .copied()
            .ok_or(AnalysisError::UnmappedClass(finer))
    }
}

impl FromIterator<(ClassId, ClassId)> for ClassMap {
    fn from_iter<T: IntoIterator<Item = (ClassId, ClassId)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseFinerAccuracy {
    pub coarse: f64,
    pub finer: f64,
}

fn check_pairs(predictions: &[ClassId], labels: &[ClassId]) -> Result<(), AnalysisError> {
    if predictions.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(())
}

pub fn coarse_finer_accuracy(
    predictions: &[ClassId],
    labels: &[ClassId],
    map: &ClassMap,
) -> Result<CoarseFinerAccuracy, AnalysisError> {
    check_pairs(predictions, labels)?;
    let (mut coarse, mut finer) = (0u64, 0u64);
    for (&p, &l) in predictions.iter().zip(labels) {
        finer += u64::from(p == l);
        coarse += u64::from(map.coarse(p)? == map.coarse(l)?);
    }
    let n = predictions.len() as f64;
    Ok(CoarseFinerAccuracy {
        coarse: coarse as f64 / n,
        finer: finer as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub accuracy: BTreeMap<ClassId, f64>,
    pub support: BTreeMap<ClassId, u64>,
    pub histogram: Histogram,
}

/// Accuracy per true label, histogrammed over `[0, 1]` with 40 bins.
pub fn per_class_accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<PerClassAccuracy, AnalysisError> {
    per_class_accuracy_binned(predictions, labels, ACCURACY_BINS)
}

pub fn per_class_accuracy_binned(
    predictions: &[ClassId],
    labels: &[ClassId],
    bins: usize,
) -> Result<PerClassAccuracy, AnalysisError> {
    check_pairs(predictions, labels)?;
    let mut tally: BTreeMap<ClassId, (u64, u64)> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        let t = tally.entry(l).or_default();
        t.0 += u64::from(p == l);
        t.1 += 1;
    }
    let mut histogram = Histogram::uniform(0.0, 1.0, bins.max(1));
    let accuracy: BTreeMap<ClassId, f64> = tally
        .iter()
        .map(|(&c, &(hit, n))| (c, hit as f64 / n as f64))
        .collect();
    accuracy.values().for_each(|&a| histogram.add(a));
    Ok(PerClassAccuracy {
        accuracy,
        support: tally.into_iter().map(|(c, (_, n))| (c, n)).collect(),
        histogram,
    })
}

fn read_rows(path: &Path, widths: &[usize]) -> Result<Vec<Vec<ClassId>>, AnalysisError> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AnalysisError::Format(e.to_string()))?;
        let parsed: Result<Vec<ClassId>, _> = rec.iter().map(str::parse).collect();
        match parsed {
            Ok(row) if widths.contains(&row.len()) => rows.push(row),
            Ok(row) => {
                return Err(AnalysisError::Format(format!(
                    "row {i} has {} fields, expected one of {widths:?}",
                    row.len()
                )))
            }
            // A non-numeric first row is a header.
            Err(_) if i == 0 => {}
            Err(e) => return Err(AnalysisError::Format(format!("row {i}: {e}"))),
        }
    }
    Ok(rows)
}

/// Reads `predicted,shape_label,texture_label` rows (optional header).
pub fn read_stimulus_records(path: impl AsRef<Path>) -> Result<Vec<StimulusRecord>, AnalysisError> {
    read_rows(path.as_ref(), &[3])?
        .into_iter()
        .enumerate()
        .map(|(i, r)| StimulusRecord::new(r[0], r[1], r[2]).ok_or(AnalysisError::NotCueConflict(i)))
        .collect()
}

/// Reads `predicted,label` rows (optional header).
pub fn read_label_records(path: impl AsRef<Path>) -> Result<(Vec<ClassId>, Vec<ClassId>), AnalysisError> {
    Ok(read_rows(path.as_ref(), &[2])?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .unzip())
}

/// Reads `finer,coarse` rows (optional header).
pub fn read_class_map(path: impl AsRef<Path>) -> Result<ClassMap, AnalysisError> {
    Ok(read_rows(path.as_ref(), &[2])?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), AnalysisError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AnalysisError::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}
