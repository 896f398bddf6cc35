//! Desk-scale training dynamics on factor-structured synthetic data.
//!
//! Each sample has a class-level shape block, a per-sample texture block and
//! an optional per-sample shortcut block. The positive view keeps the shape
//! (up to noise) and redraws texture and shortcut; the non-semantic view
//! keeps texture and shortcut but replaces the shape with noise. A
//! linear encoder followed by L2 normalization is trained with plain SGD on
//! the alpha-weighted losses, gradients flowing through every view.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;
use crate::losses::{self, ContrastiveBatch, LossConfig, LossError, LossVariant};
use crate::rng::RngStream;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("encoder output norm {0:e} is too small to normalize")]
    DegenerateOutput(f64),
    #[error("input dimension {got} does not match encoder input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Norms at or below this cannot be normalized.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub shape_dim: usize,
    pub texture_dim: usize,
    pub shortcut_dim: usize,
    pub view_noise: f64,
    pub texture_resample: bool,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_per_class: 50,
            shape_dim: 8,
            texture_dim: 8,
            shortcut_dim: 0,
            view_noise: 0.1,
            texture_resample: true,
        }
    }
}

impl ToyDataConfig {
    pub fn input_dim(&self) -> usize {
        self.shape_dim + self.texture_dim + self.shortcut_dim
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.shape_dim == 0 || self.texture_dim == 0 {
            return Err(TrainError::InvalidConfig("shape and texture dims must be >= 1".into()));
        }
        if self.n_classes == 0 || self.n_per_class == 0 {
            return Err(TrainError::InvalidConfig("dataset must be non-empty".into()));
        }
        if !(self.view_noise >= 0.0) {
            return Err(TrainError::InvalidConfig("view_noise must be >= 0".into()));
        }
        Ok(())
    }

    fn shortcut_range(&self) -> std::ops::Range<usize> {
        self.shape_dim + self.texture_dim..self.input_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample<S: Scalar = f64> {
    pub x_query: Vec<S>,
    pub x_positive: Vec<S>,
    pub x_ns: Vec<S>,
    pub class_id: usize,
}

fn gaussian<S: Scalar>(rng: &mut RngStream, n: usize) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.standard_normal())).collect()
}

/// Samples are laid out class by class.
pub fn generate_toy_dataset<S: Scalar>(
    cfg: &ToyDataConfig,
    rng: &mut RngStream,
) -> Result<Vec<ToySample<S>>, TrainError> {
    cfg.validate()?;
    let sigma = S::lit(cfg.view_noise);
    let noisy = |s: &[S], rng: &mut RngStream| -> Vec<S> {
        s.iter().map(|&v| v + sigma * S::lit(rng.standard_normal())).collect()
    };
    let mut out = Vec::with_capacity(cfg.n_classes * cfg.n_per_class);
    for class_id in 0..cfg.n_classes {
        let shape: Vec<S> = gaussian(rng, cfg.shape_dim);
        for _ in 0..cfg.n_per_class {
            let texture: Vec<S> = gaussian(rng, cfg.texture_dim);
            let shortcut: Vec<S> = gaussian(rng, cfg.shortcut_dim);
            let q_shape = noisy(&shape, rng);
            let p_shape = noisy(&shape, rng);
            let p_texture = if cfg.texture_resample {
                gaussian(rng, cfg.texture_dim)
            } else {
                texture.clone()
            };
            let p_shortcut: Vec<S> = gaussian(rng, cfg.shortcut_dim);
            let ns_shape: Vec<S> = gaussian(rng, cfg.shape_dim);
            let cat = |a: &[S], b: &[S], c: &[S]| [a, b, c].concat();
            out.push(ToySample {
                x_query: cat(&q_shape, &texture, &shortcut),
                x_positive: cat(&p_shape, &p_texture, &p_shortcut),
                x_ns: cat(&ns_shape, &texture, &shortcut),
                class_id,
            });
        }
    }
    Ok(out)
}

/// `x ↦ W x / ‖W x‖` with `W` stored row-major, `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder<S: Scalar = f64> {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<S>,
}

impl<S: Scalar> LinearEncoder<S> {
    pub fn from_weights(out_dim: usize, in_dim: usize, weights: Vec<S>) -> Result<Self, TrainError> {
        if weights.len() != out_dim * in_dim || out_dim < 2 || in_dim == 0 {
            return Err(TrainError::InvalidConfig(format!(
                "{} weights for a {out_dim}x{in_dim} encoder",
                weights.len()
            )));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights,
        })
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn random(out_dim: usize, in_dim: usize, std: S, rng: &mut RngStream) -> Result<Self, TrainError> {
        let weights = (0..out_dim * in_dim)
            .map(|_| S::lit(rng.standard_normal()) * std)
            .collect();
        Self::from_weights(out_dim, in_dim, weights)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [S] {
        &mut self.weights
    }

    fn project(&self, x: &[S]) -> Result<Vec<S>, TrainError> {
        if x.len() != self.in_dim {
            return Err(TrainError::DimMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(self.weights.chunks_exact(self.in_dim).map(|row| dot(row, x)).collect())
    }

    /// Unit embedding and the pre-normalization norm.
    fn forward_with_norm(&self, x: &[S]) -> Result<(Embedding<S>, S), TrainError> {
        let u = self.project(x)?;
        let n = u.iter().map(|&v| v * v).sum::<S>().sqrt();
        if !(n.as_f64() > MIN_OUTPUT_NORM) {
            return Err(TrainError::DegenerateOutput(n.as_f64()));
        }
        let z = u.into_iter().map(|v| v / n).collect();
        Ok((Embedding::unchecked(z), n))
    }

    pub fn forward(&self, x: &[S]) -> Result<Embedding<S>, TrainError> {
        self.forward_with_norm(x).map(|(z, _)| z)
    }

    /// Adds `∂L/∂W` for one view, given `g = ∂L/∂z` at `z = forward(x)`.
    fn accumulate(&self, grad: &mut [S], x: &[S], z: &Embedding<S>, norm: S, g: &[S]) {
        let z = z.values();
        let zg = dot(z, g);
        for (r, row) in grad.chunks_exact_mut(self.in_dim).enumerate() {
            let du = (g[r] - z[r] * zg) / norm;
            row.iter_mut().zip(x).for_each(|(w, &xi)| *w = *w + du * xi);
        }
    }
}

/// A query sample and the samples whose query views act as standard negatives.
#[derive(Debug, Clone, Copy)]
pub struct ToyBatch<'a, S: Scalar = f64> {
    pub sample: &'a ToySample<S>,
    pub negatives: &'a [&'a ToySample<S>],
}

/// Loss of one toy batch under `cfg`.
pub fn batch_loss<S: Scalar>(
    enc: &LinearEncoder<S>,
    batch: ToyBatch<'_, S>,
    cfg: &LossConfig<S>,
) -> Result<S, TrainError> {
    let (contrastive, _) = embed_batch(enc, batch)?;
    Ok(losses::loss(&contrastive, cfg)?)
}

type Norms<S> = (S, S, S, Vec<S>);

fn embed_batch<S: Scalar>(
    enc: &LinearEncoder<S>,
    batch: ToyBatch<'_, S>,
) -> Result<(ContrastiveBatch<S>, Norms<S>), TrainError> {
    let (zq, nq) = enc.forward_with_norm(&batch.sample.x_query)?;
    let (zp, np) = enc.forward_with_norm(&batch.sample.x_positive)?;
    let (zns, nns) = enc.forward_with_norm(&batch.sample.x_ns)?;
    let (zn, nn): (Vec<_>, Vec<_>) = batch
        .negatives
        .iter()
        .map(|s| enc.forward_with_norm(&s.x_query))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let contrastive = ContrastiveBatch::new(zq, zp)
        .with_non_semantic(zns)
        .with_negatives(zn);
    Ok((contrastive, (nq, np, nns, nn)))
}

/// Loss and `∂L/∂W` (row-major, same layout as the weights), chaining the
/// embedding gradients through `(I − z zᵀ)/‖W x‖` for every view.
pub fn encoder_backward<S: Scalar>(
    enc: &LinearEncoder<S>,
    batch: ToyBatch<'_, S>,
    cfg: &LossConfig<S>,
) -> Result<(S, Vec<S>), TrainError> {
    let (c, (nq, np, nns, nn)) = embed_batch(enc, batch)?;
    let (value, g) = losses::loss_and_grads(&c, cfg)?;
    let mut grad = vec![S::zero(); enc.weights.len()];
    let s = batch.sample;
    enc.accumulate(&mut grad, &s.x_query, &c.query, nq, &g.query);
    enc.accumulate(&mut grad, &s.x_positive, &c.positive, np, &g.positive);
    if let (Some(z), Some(gz)) = (&c.non_semantic, &g.non_semantic) {
        enc.accumulate(&mut grad, &s.x_ns, z, nns, gz);
    }
    for (((neg, z), n), gz) in batch.negatives.iter().zip(&c.negatives).zip(&nn).zip(&g.negatives) {
        enc.accumulate(&mut grad, &neg.x_query, z, *n, gz);
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<S: Scalar = f64> {
    pub steps: usize,
    pub lr: S,
    pub batch_negatives: usize,
    pub loss: LossConfig<S>,
    pub seed: u64,
    pub out_dim: usize,
    /// Standard deviation of the initial weights.
    pub init_std: S,
    /// Steps between trace rows; `None` means one dataset pass.
    pub eval_every: Option<usize>,
}

impl<S: Scalar> TrainConfig<S> {
    /// Defaults: 2000 steps, lr 0.5, 32 negatives, 16 output dims, init std 6,
    /// NCE_IN at τ = 0.2.
    pub fn with_alpha(alpha: S, seed: u64) -> Self {
        Self {
            steps: 2000,
            lr: S::lit(0.5),
            batch_negatives: 32,
            loss: LossConfig::with_alpha(LossVariant::NceIn, alpha).expect("valid default loss"),
            seed,
            out_dim: 16,
            init_std: S::lit(6.0),
            eval_every: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        if !(self.lr > S::zero()) {
            return Err(TrainError::InvalidConfig("lr must be > 0".into()));
        }
        if !(self.init_std > S::zero()) {
            return Err(TrainError::InvalidConfig("init_std must be > 0".into()));
        }
        if self.out_dim < 2 {
            return Err(TrainError::InvalidConfig("out_dim must be >= 2".into()));
        }
        if self.eval_every == Some(0) {
            return Err(TrainError::InvalidConfig("eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub ns_similarity: f64,
    pub positive_similarity: f64,
    pub same_class_similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut csv = csv::Writer::from_writer(w);
        for row in &self.rows {
            csv.serialize(row).map_err(csv_io)?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e.to_string()))
}

fn trace_row<S: Scalar>(
    step: usize,
    enc: &LinearEncoder<S>,
    data: &[ToySample<S>],
) -> Result<TraceRow, TrainError> {
    let views = embed_views(enc, data)?;
    let (same, _) = class_similarity_means(&views.query, data);
    Ok(TraceRow {
        step,
        ns_similarity: mean_pairwise(&views.query, &views.ns),
        positive_similarity: mean_pairwise(&views.query, &views.positive),
        same_class_similarity: same,
    })
}

/// Plain SGD. Each step draws one query sample and `batch_negatives`
/// distinct other samples whose query views serve as standard negatives.
pub fn train<S: Scalar>(
    data: &[ToySample<S>],
    tcfg: &TrainConfig<S>,
    rng: &mut RngStream,
) -> Result<(LinearEncoder<S>, MetricsTrace), TrainError> {
    tcfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| TrainError::InvalidConfig("empty dataset".into()))?;
    if tcfg.batch_negatives >= data.len() {
        return Err(TrainError::InvalidConfig(format!(
            "batch_negatives {} needs more than {} samples",
            tcfg.batch_negatives,
            data.len()
        )));
    }
    let mut enc = LinearEncoder::random(tcfg.out_dim, first.x_query.len(), tcfg.init_std, rng)?;
    let every = tcfg.eval_every.unwrap_or(data.len());
    let mut trace = MetricsTrace {
        rows: vec![trace_row(0, &enc, data)?],
    };
    for step in 1..=tcfg.steps {
        let i = rng.index(data.len());
        let picks = rng.sample_indices(data.len() - 1, tcfg.batch_negatives);
        let negatives: Vec<&ToySample<S>> = picks
            .into_iter()
            .map(|j| &data[if j >= i { j + 1 } else { j }])
            .collect();
        let batch = ToyBatch {
            sample: &data[i],
            negatives: &negatives,
        };
        let (_, grad) = encoder_backward(&enc, batch, &tcfg.loss)?;
        enc.weights
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, &g)| *w = *w - tcfg.lr * g);
        if step % every == 0 || step == tcfg.steps {
            trace.rows.push(trace_row(step, &enc, data)?);
        }
    }
    Ok((enc, trace))
}

struct Views<S: Scalar> {
    query: Vec<Embedding<S>>,
    positive: Vec<Embedding<S>>,
    ns: Vec<Embedding<S>>,
}

fn embed_views<S: Scalar>(enc: &LinearEncoder<S>, data: &[ToySample<S>]) -> Result<Views<S>, TrainError> {
    let embed = |f: fn(&ToySample<S>) -> &Vec<S>| -> Result<Vec<Embedding<S>>, TrainError> {
        data.iter().map(|s| enc.forward(f(s))).collect()
    };
    Ok(Views {
        query: embed(|s| &s.x_query)?,
        positive: embed(|s| &s.x_positive)?,
        ns: embed(|s| &s.x_ns)?,
    })
}

fn mean_pairwise<S: Scalar>(a: &[Embedding<S>], b: &[Embedding<S>]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| x.dot(y).as_f64()).sum();
    sum / a.len().max(1) as f64
}

/// Mean same-class and cross-class similarity over unordered query pairs.
fn class_similarity_means<S: Scalar>(query: &[Embedding<S>], data: &[ToySample<S>]) -> (f64, f64) {
    let labels: Vec<usize> = data.iter().map(|s| s.class_id).collect();
    class_similarity_means_with(query, &labels)
}

fn class_similarity_means_with<S: Scalar>(query: &[Embedding<S>], labels: &[usize]) -> (f64, f64) {
    let (mut same, mut n_same, mut cross, mut n_cross) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..query.len() {
        for j in i + 1..query.len() {
            let s = query[i].dot(&query[j]).as_f64();
            if labels[i] == labels[j] {
                same += s;
                n_same += 1;
            } else {
                cross += s;
                n_cross += 1;
            }
        }
    }
    let mean = |s: f64, n: u64| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(same, n_same), mean(cross, n_cross))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelianceReport {
    /// Mean cosine between query and non-semantic embeddings.
    pub texture_reliance: f64,
    /// Mean same-class minus mean cross-class query similarity.
    pub shape_clustering: f64,
    /// Squared Frobenius mass of the shortcut columns over the total.
    pub shortcut_weight_share: f64,
}

impl RelianceReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["metric", "value"]).map_err(csv_io)?;
        for (k, v) in [
            ("texture_reliance", self.texture_reliance),
            ("shape_clustering", self.shape_clustering),
            ("shortcut_weight_share", self.shortcut_weight_share),
        ] {
            csv.write_record([k, &v.to_string()]).map_err(csv_io)?;
        }
        csv.flush()?;
        Ok(())
    }
}

pub fn evaluate_reliance<S: Scalar>(
    enc: &LinearEncoder<S>,
    data: &[ToySample<S>],
    data_cfg: &ToyDataConfig,
) -> Result<RelianceReport, TrainError> {
    let labels: Vec<usize> = data.iter().map(|s| s.class_id).collect();
    evaluate_reliance_with_labels(enc, data, &labels, data_cfg)
}

/// As [`evaluate_reliance`], with the class labels used for clustering
/// supplied separately (e.g. permuted for a null baseline).
pub fn evaluate_reliance_with_labels<S: Scalar>(
    enc: &LinearEncoder<S>,
    data: &[ToySample<S>],
    labels: &[usize],
    data_cfg: &ToyDataConfig,
) -> Result<RelianceReport, TrainError> {
    if enc.in_dim != data_cfg.input_dim() {
        return Err(TrainError::DimMismatch {
            expected: data_cfg.input_dim(),
            got: enc.in_dim,
        });
    }
    let views = embed_views(enc, data)?;
    let (same, cross) = class_similarity_means_with(&views.query, labels);
    let shortcut = data_cfg.shortcut_range();
    let (mut part, mut total) = (0.0, 0.0);
    for row in enc.weights.chunks_exact(enc.in_dim) {
        for (c, w) in row.iter().enumerate() {
            let sq = (*w * *w).as_f64();
            total += sq;
            if shortcut.contains(&c) {
                part += sq;
            }
        }
    }
    Ok(RelianceReport {
        texture_reliance: mean_pairwise(&views.query, &views.ns),
        shape_clustering: same - cross,
        shortcut_weight_share: if total > 0.0 { part / total } else { 0.0 },
    })
}

/// One trained cell of an alpha/seed sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub texture_reliance: f64,
    pub shape_clustering: f64,
    pub shortcut_weight_share: f64,
}

/// Dataset and training streams are both derived from `tcfg.seed`, so one
/// seed fixes the data across alphas.
pub fn run_cell(
    data_cfg: &ToyDataConfig,
    tcfg: &TrainConfig<f64>,
) -> Result<(LinearEncoder<f64>, MetricsTrace, RelianceReport), TrainError> {
    let root = RngStream::new(tcfg.seed);
    let data = generate_toy_dataset(data_cfg, &mut root.fork(b"data"))?;
    let (enc, trace) = train(&data, tcfg, &mut root.fork(b"train"))?;
    let report = evaluate_reliance(&enc, &data, data_cfg)?;
    Ok((enc, trace, report))
}

/// Trains every `(alpha, seed)` cell in parallel; rows come back sorted by
/// alpha, then seed. `base` supplies everything except alpha and seed.
pub fn run_sweep(
    alphas: &[f64],
    seeds: &[u64],
    data_cfg: &ToyDataConfig,
    base: &TrainConfig<f64>,
) -> Result<Vec<SweepRow>, TrainError> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(TrainError::InvalidConfig("sweep needs at least one alpha and one seed".into()));
    }
    let cells: Vec<(f64, u64)> = alphas
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(alpha, seed)| {
            let mut tcfg = base.clone();
            tcfg.loss.alpha = alpha;
            tcfg.seed = seed;
            let (_, _, r) = run_cell(data_cfg, &tcfg)?;
            Ok(SweepRow {
                alpha,
                seed,
                texture_reliance: r.texture_reliance,
                shape_clustering: r.shape_clustering,
                shortcut_weight_share: r.shortcut_weight_share,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), TrainError> {
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row).map_err(csv_io)?;
    }
    csv.flush()?;
    Ok(())
}

/// Median of `values`; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of empty slice");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
