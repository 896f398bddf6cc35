//! Texture-based negatives by per-pixel non-parametric synthesis.
//!
//! Two exemplar patches are taken from the source (one centered, one at a
//! random location). The output grows outward from a copied seed block; each
//! new pixel is copied from an exemplar position whose neighborhood matches
//! the already synthesized neighborhood of the target, using a masked,
//! Gaussian-weighted SSD and a relative tolerance around the best match.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Image, PatchSpec, Rgb};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("image {width}x{height} is below the {min}-pixel minimum side")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("exemplar {index} ({width}x{height}) must be square with side >= {window}")]
    ExemplarTooSmall {
        index: usize,
        width: u32,
        height: u32,
        window: u32,
    },
    #[error("expected 1 or 2 exemplar patches, got {0}")]
    ExemplarCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllKeyword {
    All,
}

/// How many exemplar positions are scanned per output pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CandidateSubsample {
    Max(usize),
    All(AllKeyword),
}

impl Default for CandidateSubsample {
    fn default() -> Self {
        CandidateSubsample::All(AllKeyword::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub out_size: u32,
    /// Odd neighborhood side.
    pub window: u32,
    pub gauss_sigma: f64,
    /// Candidates within `(1 + tolerance)` of the best distance are eligible.
    pub tolerance: f64,
    pub seed_block: u32,
    #[serde(default)]
    pub candidate_subsample: CandidateSubsample,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::with_window(224, 11)
    }
}

impl SynthConfig {
    /// Defaults with the given output size and window; sigma is `window / 6.4`.
    pub fn with_window(out_size: u32, window: u32) -> Self {
        Self {
            out_size,
            window,
            gauss_sigma: f64::from(window) / 6.4,
            tolerance: 0.1,
            seed_block: 3,
            candidate_subsample: CandidateSubsample::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad(format!("window {} must be odd and >= 3", self.window));
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance {} must be >= 0", self.tolerance));
        }
        if !(self.gauss_sigma > 0.0) {
            return bad(format!("gauss_sigma {} must be > 0", self.gauss_sigma));
        }
        if self.seed_block < 1 || self.seed_block > self.out_size {
            return bad(format!(
                "seed_block {} must be in 1..={}",
                self.seed_block, self.out_size
            ));
        }
        if self.candidate_subsample == CandidateSubsample::Max(0) {
            return bad("candidate_subsample must be positive".into());
        }
        Ok(())
    }
}

/// One or two square exemplar patches.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    patches: Vec<Image>,
}

impl ExemplarSet {
    pub fn new(patches: Vec<Image>) -> Result<Self, SynthError> {
        if patches.is_empty() || patches.len() > 2 {
            return Err(SynthError::ExemplarCount(patches.len()));
        }
        Ok(Self { patches })
    }

    pub fn patches(&self) -> &[Image] {
        &self.patches
    }

    fn check_window(&self, window: u32) -> Result<(), SynthError> {
        for (index, p) in self.patches.iter().enumerate() {
            if p.width() != p.height() || p.width() < window {
                return Err(SynthError::ExemplarTooSmall {
                    index,
                    width: p.width(),
                    height: p.height(),
                    window,
                });
            }
        }
        Ok(())
    }
}

pub const LARGE_PATCH: u32 = 96;
pub const SMALL_PATCH: u32 = 48;

/// Center patch plus one uniformly placed patch, both of side 96 when the
/// source allows it and 48 otherwise.
pub fn extract_example_patches(
    source: &Image,
    rng: &mut RngStream,
) -> Result<ExemplarSet, SynthError> {
    let (w, h) = (source.width(), source.height());
    let p = match source.min_side() {
        m if m >= LARGE_PATCH => LARGE_PATCH,
        m if m >= SMALL_PATCH => SMALL_PATCH,
        _ => {
            return Err(SynthError::ImageTooSmall {
                width: w,
                height: h,
                min: SMALL_PATCH,
            })
        }
    };
    let center = PatchSpec::new((w - p) / 2, (h - p) / 2, p);
    let random = PatchSpec::new(
        rng.uniform_inclusive(0, w - p),
        rng.uniform_inclusive(0, h - p),
        p,
    );
    let crop = |s| source.crop(s).expect("patch lies inside the source");
    ExemplarSet::new(vec![crop(center), crop(random)])
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub image: Image,
    /// Pixels placed after the seed block.
    pub placements: usize,
}

pub fn synthesize(
    exemplars: &ExemplarSet,
    cfg: &SynthConfig,
    rng: &mut RngStream,
) -> Result<Image, SynthError> {
    synthesize_detailed(exemplars, cfg, rng).map(|o| o.image)
}

struct Candidate {
    exemplar: usize,
    x: u32,
    y: u32,
}

struct KnownNeighbor {
    dx: i32,
    dy: i32,
    weight: f64,
    color: Rgb,
}

const SCAN_CHUNK: usize = 512;

pub fn synthesize_detailed(
    exemplars: &ExemplarSet,
    cfg: &SynthConfig,
    rng: &mut RngStream,
) -> Result<SynthOutcome, SynthError> {
    cfg.validate()?;
    exemplars.check_window(cfg.window)?;
    let patches = exemplars.patches();
    if let Some(p) = patches.iter().find(|p| p.width() < cfg.seed_block) {
        return Err(SynthError::InvalidConfig(format!(
            "seed_block {} exceeds exemplar side {}",
            cfg.seed_block,
            p.width()
        )));
    }

    let half = (cfg.window / 2) as i32;
    let candidates: Vec<Candidate> = patches
        .iter()
        .enumerate()
        .flat_map(|(e, p)| {
            let hi = p.width() - half as u32;
            (half as u32..hi).flat_map(move |y| {
                (half as u32..hi).map(move |x| Candidate { exemplar: e, x, y })
            })
        })
        .collect();

    let two_sigma_sq = 2.0 * cfg.gauss_sigma * cfg.gauss_sigma;
    let kernel = |dx: i32, dy: i32| (-f64::from(dx * dx + dy * dy) / two_sigma_sq).exp();

    let n = cfg.out_size as usize;
    let mut out: Vec<Rgb> = vec![[0; 3]; n * n];
    let mut known = vec![false; n * n];
    let mut neighbor_count = vec![0u8; n * n];
    let mut frontier: BTreeSet<(Reverse<u8>, usize)> = BTreeSet::new();

    let mut mark_known = |idx: usize,
                          color: Rgb,
                          out: &mut Vec<Rgb>,
                          known: &mut Vec<bool>,
                          frontier: &mut BTreeSet<(Reverse<u8>, usize)>| {
        out[idx] = color;
        known[idx] = true;
        frontier.remove(&(Reverse(neighbor_count[idx]), idx));
        let (x, y) = ((idx % n) as i64, (idx / n) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= n as i64 || ny >= n as i64 {
                    continue;
                }
                let j = ny as usize * n + nx as usize;
                if known[j] {
                    continue;
                }
                frontier.remove(&(Reverse(neighbor_count[j]), j));
                neighbor_count[j] += 1;
                frontier.insert((Reverse(neighbor_count[j]), j));
            }
        }
    };

    // Seed block from a random exemplar, copied to the output center.
    let b = cfg.seed_block;
    let src = &patches[rng.index(patches.len())];
    let (bx, by) = (
        rng.uniform_inclusive(0, src.width() - b),
        rng.uniform_inclusive(0, src.height() - b),
    );
    let off = (cfg.out_size - b) / 2;
    for j in 0..b {
        for i in 0..b {
            let idx = (off + j) as usize * n + (off + i) as usize;
            mark_known(idx, src.get(bx + i, by + j), &mut out, &mut known, &mut frontier);
        }
    }

    let mut placements = 0usize;
    let mut neighbors: Vec<KnownNeighbor> = Vec::with_capacity((cfg.window * cfg.window) as usize);
    while let Some(&(_, target)) = frontier.iter().next() {
        let (tx, ty) = ((target % n) as i32, (target / n) as i32);
        neighbors.clear();
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (tx + dx, ty + dy);
                if x < 0 || y < 0 || x >= n as i32 || y >= n as i32 {
                    continue;
                }
                let j = y as usize * n + x as usize;
                if known[j] {
                    neighbors.push(KnownNeighbor {
                        dx,
                        dy,
                        weight: kernel(dx, dy),
                        color: out[j],
                    });
                }
            }
        }
        // Heaviest terms first so partial sums cross the cutoff early.
        neighbors.sort_by(|a, b| b.weight.total_cmp(&a.weight));

        let scan: Vec<usize> = match cfg.candidate_subsample {
            CandidateSubsample::Max(m) if m < candidates.len() => {
                rng.sample_indices(candidates.len(), m)
            }
            _ => (0..candidates.len()).collect(),
        };
        let distances = scan_distances(&scan, &candidates, patches, &neighbors, cfg.tolerance);
        let best = distances
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let cutoff = best * (1.0 + cfg.tolerance);
        let pool: Vec<usize> = scan
            .iter()
            .zip(&distances)
            .filter(|(_, d)| d.is_some_and(|d| d <= cutoff))
            .map(|(&c, _)| c)
            .collect();
        let pick = &candidates[pool[rng.index(pool.len())]];
        let color = patches[pick.exemplar].get(pick.x, pick.y);
        mark_known(target, color, &mut out, &mut known, &mut frontier);
        placements += 1;
    }

    Ok(SynthOutcome {
        image: Image::from_pixels(cfg.out_size, cfg.out_size, out).expect("square output"),
        placements,
    })
}

/// Unnormalized weighted SSD for each scanned candidate. A candidate whose
/// partial sum already exceeds `(1 + tolerance)` times the best complete
/// distance seen in its chunk is returned as `None`; it cannot be in the
/// final pool because partial sums only grow and the chunk best bounds the
/// global best from above. The mask-normalization constant is shared by all
/// candidates of one target, so comparisons on raw sums are equivalent.
fn scan_distances(
    scan: &[usize],
    candidates: &[Candidate],
    patches: &[Image],
    neighbors: &[KnownNeighbor],
    tolerance: f64,
) -> Vec<Option<f64>> {
    scan.par_chunks(SCAN_CHUNK)
        .flat_map_iter(|chunk| {
            let mut cutoff = f64::INFINITY;
            chunk
                .iter()
                .map(|&ci| {
                    let c = &candidates[ci];
                    let p = &patches[c.exemplar];
                    let mut sum = 0.0;
                    for nb in neighbors {
                        let e = p.get(
                            (c.x as i32 + nb.dx) as u32,
                            (c.y as i32 + nb.dy) as u32,
                        );
                        let ssd: i32 = (0..3)
                            .map(|k| {
                                let diff = i32::from(e[k]) - i32::from(nb.color[k]);
                                diff * diff
                            })
                            .sum();
                        sum += nb.weight * f64::from(ssd);
                        if sum > cutoff {
                            return None;
                        }
                    }
                    cutoff = cutoff.min(sum * (1.0 + tolerance));
                    Some(sum)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Texture negative of `source`: exemplar extraction followed by synthesis.
pub fn generate_texture_negative(
    source: &Image,
    cfg: &SynthConfig,
    rng: &mut RngStream,
) -> Result<Image, SynthError> {
    cfg.validate()?;
    let exemplars = extract_example_patches(source, rng)?;
    synthesize(&exemplars, cfg, rng)
}

/// Mean Euclidean RGB distance between horizontally adjacent pixels.
pub fn horizontal_adjacency_l2(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            let (a, b) = (img.get(x, y), img.get(x + 1, y));
            total += (0..3)
                .map(|k| (f64::from(a[k]) - f64::from(b[k])).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    total / f64::from((w - 1) * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg(out: u32) -> SynthConfig {
        SynthConfig::with_window(out, 5)
    }

    fn stripes(side: u32, a: Rgb, b: Rgb, width: u32) -> Image {
        Image::from_fn(side, side, |x, _| if (x / width).is_multiple_of(2) { a } else { b })
    }

    #[test]
    fn center_patch_offsets() {
        let src = Image::from_fn(224, 224, |x, y| [x as u8, y as u8, 0]);
        let set = extract_example_patches(&src, &mut RngStream::new(1)).unwrap();
        assert_eq!(set.patches().len(), 2);
        let c = &set.patches()[0];
        assert_eq!(c.width(), 96);
        assert_eq!(c.get(0, 0), [64, 64, 0]);

        let src = Image::from_fn(80, 80, |x, y| [x as u8, y as u8, 0]);
        let set = extract_example_patches(&src, &mut RngStream::new(1)).unwrap();
        assert_eq!(set.patches()[0].width(), 48);
        assert_eq!(set.patches()[0].get(0, 0), [16, 16, 0]);
        assert_eq!(set.patches()[1].width(), 48);
    }

    #[test]
    fn rectangular_source_uses_short_side() {
        let src = Image::from_fn(200, 60, |x, y| [x as u8, y as u8, 0]);
        let set = extract_example_patches(&src, &mut RngStream::new(2)).unwrap();
        assert_eq!(set.patches()[0].width(), 48);
        assert_eq!(set.patches()[0].get(0, 0), [76, 6, 0]);
    }

    #[test]
    fn too_small_source() {
        let src = Image::filled(40, 40, [0; 3]);
        assert!(matches!(
            extract_example_patches(&src, &mut RngStream::new(0)),
            Err(SynthError::ImageTooSmall { .. })
        ));
        assert!(matches!(
            generate_texture_negative(&src, &SynthConfig::default(), &mut RngStream::new(0)),
            Err(SynthError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::default();
        assert!(c.validate().is_ok());
        c.window = 4;
        assert!(c.validate().is_err());
        c.window = 1;
        assert!(c.validate().is_err());
        let c = SynthConfig {
            tolerance: -0.1,
            ..SynthConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SynthConfig {
            seed_block: 0,
            ..SynthConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn subsample_serde_forms() {
        let all: CandidateSubsample = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(all, CandidateSubsample::default());
        let cap: CandidateSubsample = serde_json::from_str("64").unwrap();
        assert_eq!(cap, CandidateSubsample::Max(64));
        assert_eq!(serde_json::to_string(&all).unwrap(), "\"all\"");
    }

    #[test]
    fn exemplar_too_small() {
        let set = ExemplarSet::new(vec![Image::filled(8, 8, [0; 3])]).unwrap();
        assert!(matches!(
            synthesize(&set, &SynthConfig::default(), &mut RngStream::new(0)),
            Err(SynthError::ExemplarTooSmall { window: 11, .. })
        ));
        let rect = ExemplarSet::new(vec![Image::filled(20, 30, [0; 3])]).unwrap();
        assert!(synthesize(&rect, &small_cfg(16), &mut RngStream::new(0)).is_err());
        assert!(matches!(ExemplarSet::new(vec![]), Err(SynthError::ExemplarCount(0))));
    }

    #[test]
    fn uniform_exemplar_gives_uniform_output() {
        let set = ExemplarSet::new(vec![Image::filled(16, 16, [10, 20, 30])]).unwrap();
        let out = synthesize(&set, &small_cfg(24), &mut RngStream::new(3)).unwrap();
        assert!(out.pixels().iter().all(|&p| p == [10, 20, 30]));
    }

    #[test]
    fn stripe_palette_closure_and_progress() {
        let (a, b) = ([200, 0, 0], [0, 0, 200]);
        let set = ExemplarSet::new(vec![stripes(20, a, b, 2)]).unwrap();
        let cfg = small_cfg(32);
        let o = synthesize_detailed(&set, &cfg, &mut RngStream::new(4)).unwrap();
        assert_eq!(o.placements, 32 * 32 - 9);
        assert!(o.image.pixels().iter().all(|p| *p == a || *p == b));
    }

    #[test]
    fn two_exemplar_palette_closure() {
        let mut rng = RngStream::new(5);
        let e1 = Image::from_fn(12, 12, |_, _| [rng.index(4) as u8 * 60, 0, 0]);
        let e2 = Image::from_fn(12, 12, |_, _| [0, rng.index(4) as u8 * 60, 7]);
        let palette: HashSet<Rgb> = e1.pixels().iter().chain(e2.pixels()).copied().collect();
        let set = ExemplarSet::new(vec![e1, e2]).unwrap();
        let out = synthesize(&set, &small_cfg(20), &mut RngStream::new(6)).unwrap();
        assert!(out.pixels().iter().all(|p| palette.contains(p)));
    }

    #[test]
    fn deterministic_under_seed() {
        let src = Image::from_fn(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, ((x ^ y) * 3) as u8]);
        let cfg = small_cfg(20);
        let a = generate_texture_negative(&src, &cfg, &mut RngStream::new(7)).unwrap();
        let b = generate_texture_negative(&src, &cfg, &mut RngStream::new(7)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn subsampled_scan_still_closes_palette() {
        let set = ExemplarSet::new(vec![stripes(16, [1, 1, 1], [250, 250, 250], 3)]).unwrap();
        let mut cfg = small_cfg(20);
        cfg.candidate_subsample = CandidateSubsample::Max(10);
        let out = synthesize(&set, &cfg, &mut RngStream::new(8)).unwrap();
        assert!(out
            .pixels()
            .iter()
            .all(|p| *p == [1, 1, 1] || *p == [250, 250, 250]));
    }

    #[test]
    fn pruned_scan_matches_exhaustive_pool() {
        // Oracle: full distances without pruning, pool recomputed directly.
        let mut rng = RngStream::new(9);
        let ex = Image::from_fn(14, 14, |_, _| [rng.index(256) as u8, rng.index(256) as u8, 0]);
        let patches = vec![ex];
        let half = 2i32;
        let candidates: Vec<Candidate> = (2..12u32)
            .flat_map(|y| (2..12u32).map(move |x| Candidate { exemplar: 0, x, y }))
            .collect();
        let neighbors: Vec<KnownNeighbor> = (-half..=half)
            .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dy < 0 || (dy == 0 && dx < 0))
            .map(|(dx, dy)| KnownNeighbor {
                dx,
                dy,
                weight: (-f64::from(dx * dx + dy * dy) / 2.0).exp(),
                color: [rng.index(256) as u8, rng.index(256) as u8, 0],
            })
            .collect();
        let full: Vec<f64> = candidates
            .iter()
            .map(|c| {
                neighbors
                    .iter()
                    .map(|nb| {
                        let e = patches[0].get((c.x as i32 + nb.dx) as u32, (c.y as i32 + nb.dy) as u32);
                        nb.weight
                            * (0..3)
                                .map(|k| (f64::from(e[k]) - f64::from(nb.color[k])).powi(2))
                                .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        let tol = 0.5;
        let best = full.iter().copied().fold(f64::INFINITY, f64::min);
        let want: Vec<usize> = (0..full.len()).filter(|&i| full[i] <= best * (1.0 + tol)).collect();
        let scan: Vec<usize> = (0..candidates.len()).collect();
        let got_d = scan_distances(&scan, &candidates, &patches, &neighbors, tol);
        let got_best = got_d.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let got: Vec<usize> = (0..full.len())
            .filter(|&i| got_d[i].is_some_and(|d| d <= got_best * (1.0 + tol)))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn adjacency_statistic() {
        assert_eq!(horizontal_adjacency_l2(&Image::filled(5, 5, [3; 3])), 0.0);
        let s = stripes(4, [0, 0, 0], [3, 4, 0], 1);
        assert!((horizontal_adjacency_l2(&s) - 5.0).abs() < 1e-12);
    }
}
