//! Contrastive losses with an extra weight `alpha` on a non-semantic
//! negative `z_ns`, their analytic gradients, and a central-difference
//! gradient oracle.
//!
//! With logits `l_p = z_i·z_p/τ` and `l_n = z_i·z_n/τ`:
//!
//! * `NceIn`:  `−l_p + log(e^{l_p} + e^{α z_i·z_ns/τ} + Σ e^{l_n})`
//! * `NceOut`: `−l_p + log(e^{l_p} + α e^{z_i·z_ns/τ} + Σ e^{l_n})`
//! * `Byol`:   `2 − 2α − 2 z_i·z_p + 2α z_i·z_ns + Σ_e w_e (2 z_i·z_e − 2)`
//!
//! The BYOL form is the squared-distance expansion for unit vectors. When
//! `z_ns` is absent and `α = 0`, the non-semantic term is dropped entirely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("alpha > 0 requires a non-semantic negative")]
    MissingNonSemantic,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("finite-difference step must be positive")]
    InvalidStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    NceIn,
    NceOut,
    Byol,
}

impl std::str::FromStr for LossVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nce_in" | "in" => Ok(Self::NceIn),
            "nce_out" | "out" => Ok(Self::NceOut),
            "byol" => Ok(Self::Byol),
            other => Err(format!("unknown loss variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<S: Scalar = f64> {
    pub temperature: S,
    pub alpha: S,
    pub variant: LossVariant,
}

impl<S: Scalar> LossConfig<S> {
    pub fn new(variant: LossVariant, temperature: S, alpha: S) -> Result<Self, LossError> {
        let cfg = Self {
            temperature,
            alpha,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default temperature 0.2.
    pub fn with_alpha(variant: LossVariant, alpha: S) -> Result<Self, LossError> {
        Self::new(variant, S::lit(0.2), alpha)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > S::zero()) || !self.temperature.is_finite() {
            return Err(LossError::InvalidConfig(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !(self.alpha >= S::zero()) || !self.alpha.is_finite() {
            return Err(LossError::InvalidConfig(format!(
                "alpha {} must be >= 0",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Query, positive, optional non-semantic negative, standard negatives and
/// weighted extra BYOL negatives. All embeddings share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<S: Scalar = f64> {
    pub query: Embedding<S>,
    pub positive: Embedding<S>,
    pub non_semantic: Option<Embedding<S>>,
    pub negatives: Vec<Embedding<S>>,
    pub extra_byol_negatives: Vec<(Embedding<S>, S)>,
}

impl<S: Scalar> ContrastiveBatch<S> {
    pub fn new(query: Embedding<S>, positive: Embedding<S>) -> Self {
        Self {
            query,
            positive,
            non_semantic: None,
            negatives: Vec::new(),
            extra_byol_negatives: Vec::new(),
        }
    }

    pub fn with_non_semantic(mut self, ns: Embedding<S>) -> Self {
        self.non_semantic = Some(ns);
        self
    }

    pub fn with_negatives(mut self, negatives: Vec<Embedding<S>>) -> Self {
        self.negatives = negatives;
        self
    }

    pub fn with_extra_byol_negatives(mut self, extras: Vec<(Embedding<S>, S)>) -> Self {
        self.extra_byol_negatives = extras;
        self
    }

    pub fn dim(&self) -> usize {
        self.query.dim()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let expected = self.dim();
        let others = std::iter::once(&self.positive)
            .chain(&self.non_semantic)
            .chain(&self.negatives)
            .chain(self.extra_byol_negatives.iter().map(|(e, _)| e));
        for e in others {
            if e.dim() != expected {
                return Err(LossError::DimMismatch {
                    expected,
                    got: e.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Gradients of the loss with respect to every embedding in the batch,
/// each treated as a free vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads<S: Scalar = f64> {
    pub query: Vec<S>,
    pub positive: Vec<S>,
    pub non_semantic: Option<Vec<S>>,
    pub negatives: Vec<Vec<S>>,
    pub extra_byol_negatives: Vec<Vec<S>>,
}

fn scaled<S: Scalar>(v: &[S], c: S) -> Vec<S> {
    v.iter().map(|&x| x * c).collect()
}

fn axpy<S: Scalar>(acc: &mut [S], c: S, v: &[S]) {
    acc.iter_mut().zip(v).for_each(|(a, &x)| *a = *a + c * x);
}

/// Logits of one NCE evaluation and, per logit, the factor `∂logit/∂z_i`
/// carries on the partner vector.
struct NceLogits<S> {
    positive: S,
    non_semantic: Option<(S, S)>,
    negatives: Vec<S>,
}

fn nce_logits<S: Scalar>(
    query: &[S],
    batch: &ContrastiveBatch<S>,
    cfg: &LossConfig<S>,
    alpha_inside: bool,
) -> Result<NceLogits<S>, LossError> {
    let tau = cfg.temperature;
    let non_semantic = match (&batch.non_semantic, cfg.alpha > S::zero()) {
        (None, true) => return Err(LossError::MissingNonSemantic),
        (None, false) => None,
        (Some(ns), _) => {
            let s = dot(query, ns.values()) / tau;
            if alpha_inside {
                Some((cfg.alpha * s, cfg.alpha / tau))
            } else if cfg.alpha > S::zero() {
                Some((cfg.alpha.ln() + s, S::one() / tau))
            } else {
                None
            }
        }
    };
    Ok(NceLogits {
        positive: dot(query, batch.positive.values()) / tau,
        non_semantic,
        negatives: batch
            .negatives
            .iter()
            .map(|n| dot(query, n.values()) / tau)
            .collect(),
    })
}

impl<S: Scalar> NceLogits<S> {
    fn all(&self) -> impl Iterator<Item = S> + '_ {
        std::iter::once(self.positive)
            .chain(self.non_semantic.map(|(l, _)| l))
            .chain(self.negatives.iter().copied())
    }

    fn max(&self) -> S {
        self.all().fold(S::neg_infinity(), S::max)
    }

    fn log_sum_exp(&self) -> S {
        let m = self.max();
        m + self.all().map(|l| (l - m).exp()).sum::<S>().ln()
    }

    /// `ln(1 + Σ exp(l − l_p))` when the positive leads, so saturated
    /// batches keep relative precision.
    fn loss(&self) -> S {
        let m = self.max();
        if self.positive >= m {
            let rest: S = self.all().skip(1).map(|l| (l - self.positive).exp()).sum();
            rest.ln_1p()
        } else {
            self.log_sum_exp() - self.positive
        }
    }
}

fn byol_value<S: Scalar>(query: &[S], batch: &ContrastiveBatch<S>, alpha: S) -> Result<S, LossError> {
    let two = S::lit(2.0);
    let mut loss = two - two * dot(query, batch.positive.values());
    match (&batch.non_semantic, alpha > S::zero()) {
        (None, true) => return Err(LossError::MissingNonSemantic),
        (Some(ns), _) => loss = loss - two * alpha + two * alpha * dot(query, ns.values()),
        (None, false) => {}
    }
    for (e, w) in &batch.extra_byol_negatives {
        loss = loss + *w * (two * dot(query, e.values()) - two);
    }
    Ok(loss)
}

fn check(batch: &ContrastiveBatch<impl Scalar>, query_len: usize) -> Result<(), LossError> {
    batch.validate()?;
    if query_len != batch.dim() {
        return Err(LossError::DimMismatch {
            expected: batch.dim(),
            got: query_len,
        });
    }
    Ok(())
}

/// Loss of `variant` with `query` substituted for `batch.query`.
pub fn loss_at<S: Scalar>(
    variant: LossVariant,
    query: &[S],
    batch: &ContrastiveBatch<S>,
    cfg: &LossConfig<S>,
) -> Result<S, LossError> {
    cfg.validate()?;
    check(batch, query.len())?;
    match variant {
        LossVariant::NceIn => Ok(nce_logits(query, batch, cfg, true)?.loss()),
        LossVariant::NceOut => Ok(nce_logits(query, batch, cfg, false)?.loss()),
        LossVariant::Byol => byol_value(query, batch, cfg.alpha),
    }
}

/// `α` scales the non-semantic logit inside the exponential.
pub fn nce_in_loss<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<S, LossError> {
    loss_at(LossVariant::NceIn, batch.query.values(), batch, cfg)
}

/// `α` multiplies the non-semantic exponential.
pub fn nce_out_loss<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<S, LossError> {
    loss_at(LossVariant::NceOut, batch.query.values(), batch, cfg)
}

pub fn byol_ns_loss<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<S, LossError> {
    loss_at(LossVariant::Byol, batch.query.values(), batch, cfg)
}

/// Loss for `cfg.variant`.
pub fn loss<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<S, LossError> {
    loss_at(cfg.variant, batch.query.values(), batch, cfg)
}

/// Analytic `∂L/∂z_i` for `cfg.variant`, `z_i` treated as a free vector.
pub fn grad_wrt_query<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<Vec<S>, LossError> {
    grads(batch, cfg).map(|g| g.query)
}

/// Loss value and gradients with respect to every embedding of the batch.
pub fn loss_and_grads<S: Scalar>(
    batch: &ContrastiveBatch<S>,
    cfg: &LossConfig<S>,
) -> Result<(S, LossGrads<S>), LossError> {
    Ok((loss(batch, cfg)?, grads(batch, cfg)?))
}

pub fn grads<S: Scalar>(batch: &ContrastiveBatch<S>, cfg: &LossConfig<S>) -> Result<LossGrads<S>, LossError> {
    cfg.validate()?;
    batch.validate()?;
    let q = batch.query.values();
    match cfg.variant {
        LossVariant::NceIn | LossVariant::NceOut => {
            let alpha_inside = cfg.variant == LossVariant::NceIn;
            let logits = nce_logits(q, batch, cfg, alpha_inside)?;
            let tau_inv = S::one() / cfg.temperature;
            let lse = logits.log_sum_exp();
            let prob = |l: S| (l - lse).exp();

            let p_pos = prob(logits.positive);
            let mut dq = scaled(batch.positive.values(), (p_pos - S::one()) * tau_inv);
            let positive = scaled(q, (p_pos - S::one()) * tau_inv);

            let non_semantic = match (&batch.non_semantic, logits.non_semantic) {
                (Some(ns), Some((l, factor))) => {
                    let w = prob(l) * factor;
                    axpy(&mut dq, w, ns.values());
                    Some(scaled(q, w))
                }
                (Some(_), None) => Some(vec![S::zero(); q.len()]),
                _ => None,
            };
            let negatives = batch
                .negatives
                .iter()
                .zip(&logits.negatives)
                .map(|(n, &l)| {
                    let w = prob(l) * tau_inv;
                    axpy(&mut dq, w, n.values());
                    scaled(q, w)
                })
                .collect();
            let extra_byol_negatives = vec![vec![S::zero(); q.len()]; batch.extra_byol_negatives.len()];
            Ok(LossGrads {
                query: dq,
                positive,
                non_semantic,
                negatives,
                extra_byol_negatives,
            })
        }
        LossVariant::Byol => {
            let two = S::lit(2.0);
            if batch.non_semantic.is_none() && cfg.alpha > S::zero() {
                return Err(LossError::MissingNonSemantic);
            }
            let mut dq = scaled(batch.positive.values(), -two);
            let non_semantic = batch.non_semantic.as_ref().map(|ns| {
                axpy(&mut dq, two * cfg.alpha, ns.values());
                scaled(q, two * cfg.alpha)
            });
            let extra_byol_negatives = batch
                .extra_byol_negatives
                .iter()
                .map(|(e, w)| {
                    axpy(&mut dq, two * *w, e.values());
                    scaled(q, two * *w)
                })
                .collect();
            Ok(LossGrads {
                query: dq,
                positive: scaled(q, -two),
                non_semantic,
                negatives: vec![vec![S::zero(); q.len()]; batch.negatives.len()],
                extra_byol_negatives,
            })
        }
    }
}

/// Central differences of `variant`'s loss in each coordinate of `z_i`.
/// The perturbed query is not renormalized.
pub fn finite_diff_grad<S: Scalar>(
    variant: LossVariant,
    batch: &ContrastiveBatch<S>,
    cfg: &LossConfig<S>,
    h: S,
) -> Result<Vec<S>, LossError> {
    if !(h > S::zero()) {
        return Err(LossError::InvalidStep);
    }
    let mut point = batch.query.values().to_vec();
    let mut out = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = point[k];
        point[k] = orig + h;
        let plus = loss_at(variant, &point, batch, cfg)?;
        point[k] = orig - h;
        let minus = loss_at(variant, &point, batch, cfg)?;
        point[k] = orig;
        out.push((plus - minus) / (S::lit(2.0) * h));
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute error when both are tiny.
pub fn relative_l2_error<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let sq = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = sq(&mut a.iter().zip(b).map(|(x, y)| x.as_f64() - y.as_f64()));
    let scale = sq(&mut a.iter().map(|x| x.as_f64())).max(sq(&mut b.iter().map(|x| x.as_f64())));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding<f64> {
        Embedding::normalized(v.to_vec()).unwrap()
    }

    fn random_unit(rng: &mut RngStream, dim: usize) -> Embedding<f64> {
        Embedding::normalized((0..dim).map(|_| rng.standard_normal()).collect()).unwrap()
    }

    fn random_batch(rng: &mut RngStream, dim: usize, negatives: usize) -> ContrastiveBatch<f64> {
        ContrastiveBatch::new(random_unit(rng, dim), random_unit(rng, dim))
            .with_non_semantic(random_unit(rng, dim))
            .with_negatives((0..negatives).map(|_| random_unit(rng, dim)).collect())
    }

    fn cfg(variant: LossVariant, tau: f64, alpha: f64) -> LossConfig<f64> {
        LossConfig::new(variant, tau, alpha).unwrap()
    }

    #[test]
    fn nce_in_scalar_cases() {
        let b = ContrastiveBatch::new(e(&[1.0, 0.0]), e(&[1.0, 0.0])).with_non_semantic(e(&[0.0, 1.0]));
        let l = nce_in_loss(&b, &cfg(LossVariant::NceIn, 1.0, 0.0)).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);

        let b = ContrastiveBatch::new(e(&[1.0, 0.0]), e(&[1.0, 0.0])).with_non_semantic(e(&[1.0, 0.0]));
        let l = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.5, 2.0)).unwrap();
        assert!((l - (1.0 + 2.0f64.exp()).ln()).abs() < 1e-12);
        assert!((l - 2.126928).abs() < 1e-6);
    }

    #[test]
    fn nce_in_orthogonal_negatives_closed_form() {
        for n in [0usize, 1, 8] {
            let dim = 10;
            let unit = |k: usize| {
                let mut v = vec![0.0; dim];
                v[k] = 1.0;
                Embedding::new(v).unwrap()
            };
            let b = ContrastiveBatch::new(unit(0), unit(0))
                .with_non_semantic(unit(1))
                .with_negatives((0..n).map(|k| unit(k + 1)).collect());
            let tau = 0.2;
            let l = nce_in_loss(&b, &cfg(LossVariant::NceIn, tau, 0.0)).unwrap();
            let want = -((1.0 / tau).exp() / ((1.0 / tau).exp() + (n as f64 + 1.0))).ln();
            assert!((l - want).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn missing_non_semantic() {
        let b = ContrastiveBatch::new(e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        for v in [LossVariant::NceIn, LossVariant::NceOut, LossVariant::Byol] {
            let c = cfg(v, 0.2, 1.0);
            assert_eq!(loss(&b, &c), Err(LossError::MissingNonSemantic));
            assert_eq!(grad_wrt_query(&b, &c), Err(LossError::MissingNonSemantic));
            assert!(loss(&b, &cfg(v, 0.2, 0.0)).is_ok());
        }
    }

    #[test]
    fn config_and_dim_errors() {
        assert!(LossConfig::<f64>::new(LossVariant::NceIn, 0.0, 1.0).is_err());
        assert!(LossConfig::<f64>::new(LossVariant::NceIn, 0.2, -1.0).is_err());
        let b = ContrastiveBatch::new(e(&[1.0, 0.0]), e(&[0.0, 1.0, 0.0]));
        assert!(matches!(
            loss(&b, &cfg(LossVariant::Byol, 0.2, 0.0)),
            Err(LossError::DimMismatch { .. })
        ));
        let b = ContrastiveBatch::new(e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        assert_eq!(
            finite_diff_grad(LossVariant::Byol, &b, &cfg(LossVariant::Byol, 0.2, 0.0), 0.0),
            Err(LossError::InvalidStep)
        );
    }

    #[test]
    fn nce_out_reduces_without_ns_term_at_zero_alpha() {
        let mut rng = RngStream::new(1);
        let b = random_batch(&mut rng, 8, 4);
        let out = nce_out_loss(&b, &cfg(LossVariant::NceOut, 0.2, 0.0)).unwrap();
        let mut plain = b.clone();
        plain.non_semantic = None;
        let std_in = nce_in_loss(&plain, &cfg(LossVariant::NceIn, 0.2, 0.0)).unwrap();
        assert!((out - std_in).abs() < 1e-12);
        // L_in at alpha = 0 keeps a constant e^0 term, unlike L_out.
        let with_ns = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.2, 0.0)).unwrap();
        assert!(with_ns > out);
    }

    #[test]
    fn out_equals_in_with_replicated_negatives() {
        let mut rng = RngStream::new(2);
        let b = random_batch(&mut rng, 8, 5);
        let out = nce_out_loss(&b, &cfg(LossVariant::NceOut, 0.2, 3.0)).unwrap();
        let mut rep = b.clone();
        for _ in 0..3 {
            rep.negatives.push(b.non_semantic.clone().unwrap());
        }
        rep.non_semantic = None;
        let inl = nce_in_loss(&rep, &cfg(LossVariant::NceIn, 0.2, 0.0)).unwrap();
        assert!((out - inl).abs() < 1e-12);
    }

    #[test]
    fn byol_cases() {
        let x = e(&[1.0, 0.0]);
        let b = ContrastiveBatch::new(x.clone(), x.clone());
        assert_eq!(byol_ns_loss(&b, &cfg(LossVariant::Byol, 0.2, 0.0)).unwrap(), 0.0);
        let b = b.with_non_semantic(x.clone());
        for a in [0.0, 0.5, 3.0] {
            assert!(byol_ns_loss(&b, &cfg(LossVariant::Byol, 0.2, a)).unwrap().abs() < 1e-15);
        }
        // z_i·z_p = 0.5, z_i·z_ns = 0.25.
        let q = e(&[1.0, 0.0]);
        let p = e(&[0.5, 0.75f64.sqrt()]);
        let ns = e(&[0.25, (1.0 - 0.0625f64).sqrt()]);
        let b = ContrastiveBatch::new(q, p).with_non_semantic(ns);
        let l = byol_ns_loss(&b, &cfg(LossVariant::Byol, 0.2, 2.0)).unwrap();
        assert!((l + 2.0).abs() < 1e-12);
    }

    #[test]
    fn byol_base_case_is_squared_distance() {
        let mut rng = RngStream::new(3);
        let (q, p) = (random_unit(&mut rng, 6), random_unit(&mut rng, 6));
        let sq: f64 = q.values().iter().zip(p.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let b = ContrastiveBatch::new(q, p);
        let l = byol_ns_loss(&b, &cfg(LossVariant::Byol, 0.2, 0.0)).unwrap();
        assert!((l - sq).abs() < 1e-12);
    }

    #[test]
    fn byol_gradient_closed_form() {
        let mut rng = RngStream::new(4);
        let b = random_batch(&mut rng, 5, 0);
        let g = grad_wrt_query(&b, &cfg(LossVariant::Byol, 0.2, 0.0)).unwrap();
        let want: Vec<f64> = b.positive.values().iter().map(|v| -2.0 * v).collect();
        assert_eq!(g, want);
    }

    #[test]
    fn byol_extras_gradient() {
        let mut rng = RngStream::new(5);
        let extras = vec![(random_unit(&mut rng, 4), 1.0), (random_unit(&mut rng, 4), 0.5)];
        let b = random_batch(&mut rng, 4, 0).with_extra_byol_negatives(extras);
        let c = cfg(LossVariant::Byol, 0.2, 1.5);
        let g = grad_wrt_query(&b, &c).unwrap();
        let fd = finite_diff_grad(LossVariant::Byol, &b, &c, 0.3).unwrap();
        assert!(relative_l2_error(&g, &fd) < 1e-12);
    }

    #[test]
    fn nce_in_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(6);
        let b = random_batch(&mut rng, 8, 4);
        let c = cfg(LossVariant::NceIn, 0.2, 2.0);
        let g = grad_wrt_query(&b, &c).unwrap();
        let fd = finite_diff_grad(LossVariant::NceIn, &b, &c, 1e-5).unwrap();
        assert!(relative_l2_error(&g, &fd) <= 1e-6);
    }

    #[test]
    fn finite_difference_step_robustness() {
        let mut rng = RngStream::new(7);
        let b = random_batch(&mut rng, 8, 4);
        let c = cfg(LossVariant::NceIn, 0.2, 2.0);
        let a = finite_diff_grad(LossVariant::NceIn, &b, &c, 1e-5).unwrap();
        let d = finite_diff_grad(LossVariant::NceIn, &b, &c, 1e-6).unwrap();
        assert!(relative_l2_error(&a, &d) <= 1e-4);
    }

    #[test]
    fn out_and_in_gradients_coincide_at_unit_alpha() {
        let mut rng = RngStream::new(8);
        let b = random_batch(&mut rng, 8, 3);
        let gi = grad_wrt_query(&b, &cfg(LossVariant::NceIn, 0.2, 1.0)).unwrap();
        let go = grad_wrt_query(&b, &cfg(LossVariant::NceOut, 0.2, 1.0)).unwrap();
        assert!(relative_l2_error(&gi, &go) < 1e-14);
    }

    #[test]
    fn partner_gradients_match_finite_differences() {
        let mut rng = RngStream::new(9);
        let base = random_batch(&mut rng, 6, 3)
            .with_extra_byol_negatives(vec![(random_unit(&mut rng, 6), 0.7)]);
        for v in [LossVariant::NceIn, LossVariant::NceOut, LossVariant::Byol] {
            let c = cfg(v, 0.3, 1.7);
            let g = grads(&base, &c).unwrap();
            // Swap roles: differentiate with respect to the positive.
            let h = 1e-6;
            let mut fd = Vec::new();
            for k in 0..6 {
                let mut plus = base.clone();
                let mut minus = base.clone();
                let mut vp = base.positive.values().to_vec();
                let mut vm = vp.clone();
                vp[k] += h;
                vm[k] -= h;
                plus.positive = Embedding::unchecked(vp);
                minus.positive = Embedding::unchecked(vm);
                fd.push((loss(&plus, &c).unwrap() - loss(&minus, &c).unwrap()) / (2.0 * h));
            }
            assert!(relative_l2_error(&g.positive, &fd) < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn equal_logits_give_log_count() {
        let x = e(&[0.6, 0.8]);
        for n in [0usize, 3, 10] {
            let b = ContrastiveBatch::new(x.clone(), x.clone())
                .with_non_semantic(x.clone())
                .with_negatives(vec![x.clone(); n]);
            let l = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.2, 1.0)).unwrap();
            assert!((l - ((n + 2) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut rng = RngStream::new(10);
        let b = random_batch(&mut rng, 8, 8);
        for tau in [1e-3, 1.0 / 700.0] {
            for v in [LossVariant::NceIn, LossVariant::NceOut] {
                let c = cfg(v, tau, 3.0);
                assert!(loss(&b, &c).unwrap().is_finite());
                assert!(grad_wrt_query(&b, &c).unwrap().iter().all(|g| g.is_finite()));
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let q = Embedding::<f32>::normalized(vec![1.0, 0.0]).unwrap();
        let ns = Embedding::<f32>::normalized(vec![0.0, 1.0]).unwrap();
        let b = ContrastiveBatch::new(q.clone(), q).with_non_semantic(ns);
        let l = nce_in_loss(&b, &LossConfig::new(LossVariant::NceIn, 1.0f32, 0.0).unwrap()).unwrap();
        assert!((l - 0.313_262).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn replication_identity(seed in any::<u64>(), k in 1usize..6, n in 0usize..6, tau in 0.05f64..2.0) {
            let mut rng = RngStream::new(seed);
            let b = random_batch(&mut rng, 8, n);
            let out = nce_out_loss(&b, &cfg(LossVariant::NceOut, tau, k as f64)).unwrap();
            let mut rep = b.clone();
            rep.negatives.extend(std::iter::repeat_n(b.non_semantic.clone().unwrap(), k - 1));
            let inl = nce_in_loss(&rep, &cfg(LossVariant::NceIn, tau, 1.0)).unwrap();
            prop_assert!((out - inl).abs() <= 1e-12 * out.abs().max(1.0));
        }

        #[test]
        fn in_equals_out_at_unit_alpha(seed in any::<u64>(), n in 0usize..6) {
            let mut rng = RngStream::new(seed);
            let b = random_batch(&mut rng, 8, n);
            let a = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.2, 1.0)).unwrap();
            let o = nce_out_loss(&b, &cfg(LossVariant::NceOut, 0.2, 1.0)).unwrap();
            prop_assert!((a - o).abs() < 1e-12);
        }

        #[test]
        fn nce_in_increases_with_alpha(seed in any::<u64>(), a in 0.0f64..4.0, da in 0.01f64..2.0) {
            let mut rng = RngStream::new(seed);
            let mut b = random_batch(&mut rng, 8, 3);
            if b.query.dot(b.non_semantic.as_ref().unwrap()) <= 0.0 {
                let flipped: Vec<f64> = b.non_semantic.unwrap().values().iter().map(|v| -v).collect();
                b.non_semantic = Some(Embedding::new(flipped).unwrap());
            }
            prop_assume!(b.query.dot(b.non_semantic.as_ref().unwrap()) > 1e-3);
            let lo = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.2, a)).unwrap();
            let hi = nce_in_loss(&b, &cfg(LossVariant::NceIn, 0.2, a + da)).unwrap();
            prop_assert!(hi > lo);
        }
    }
}
