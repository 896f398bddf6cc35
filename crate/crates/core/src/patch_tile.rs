//! Patch-based negatives: crop `d x d` patches from random non-overlapping
//! locations, tile them row-major into a `g·d` square canvas with
//! `g = ⌈out_size / d⌉`, and center-crop the canvas to `out_size`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Image, ImageError, PatchSpec, Rgb};
use crate::rng::RngStream;

/// Uniform draws tried per patch before the free positions are enumerated.
pub const REJECTION_ATTEMPTS_PER_PATCH: usize = 100;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("invalid tile config: {0}")]
    InvalidConfig(String),
    #[error("patch size {d} exceeds {width}x{height} image")]
    PatchTooLarge { d: u32, width: u32, height: u32 },
    #[error("image {width}x{height} is smaller than the minimum patch size {d_min}")]
    ImageTooSmall { width: u32, height: u32, d_min: u32 },
    #[error("expected {expected} patch specs, got {got}")]
    SpecCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    #[default]
    Center,
}

/// Per-patch flip/rotation probabilities. Rotation, when it fires, picks one
/// of 0°, 90°, 180°, 270° uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PatchAugment {
    pub hflip: f64,
    pub vflip: f64,
    pub rot90: f64,
}

impl PatchAugment {
    pub const OFF: PatchAugment = PatchAugment {
        hflip: 0.0,
        vflip: 0.0,
        rot90: 0.0,
    };

    /// Flips only pay off for small patches, so they are enabled only when
    /// every sampled patch is at most 28 pixels.
    pub fn default_for(d_max: u32) -> Self {
        if d_max <= 28 {
            PatchAugment {
                hflip: 0.5,
                ..Self::OFF
            }
        } else {
            Self::OFF
        }
    }

    pub fn is_off(&self) -> bool {
        self.hflip == 0.0 && self.vflip == 0.0 && self.rot90 == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub d_min: u32,
    pub d_max: u32,
    pub out_size: u32,
    pub augment: PatchAugment,
    #[serde(default)]
    pub crop_mode: CropMode,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self::new(16, 72).expect("default range is valid")
    }
}

impl TileConfig {
    /// Patch sizes drawn from `d_min..=d_max`, 224 output, default augmentation.
    pub fn new(d_min: u32, d_max: u32) -> Result<Self, TileError> {
        Self {
            d_min,
            d_max,
            out_size: 224,
            augment: PatchAugment::default_for(d_max),
            crop_mode: CropMode::Center,
        }
        .validated()
    }

    pub fn with_out_size(mut self, out_size: u32) -> Result<Self, TileError> {
        self.out_size = out_size;
        self.validated()
    }

    pub fn with_augment(mut self, augment: PatchAugment) -> Result<Self, TileError> {
        self.augment = augment;
        self.validated()
    }

    pub fn validated(self) -> Result<Self, TileError> {
        if !(1 <= self.d_min && self.d_min <= self.d_max && self.d_max <= self.out_size) {
            return Err(TileError::InvalidConfig(format!(
                "need 1 <= d_min ({}) <= d_max ({}) <= out_size ({})",
                self.d_min, self.d_max, self.out_size
            )));
        }
        let a = &self.augment;
        for (name, p) in [("hflip", a.hflip), ("vflip", a.vflip), ("rot90", a.rot90)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TileError::InvalidConfig(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(self)
    }

    /// Grid side `⌈out_size / d⌉`.
    pub fn grid_side(&self, d: u32) -> u32 {
        self.out_size.div_ceil(d)
    }
}

/// Patch locations plus whether non-overlap had to be abandoned.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub specs: Vec<PatchSpec>,
    pub overlap_fallback: bool,
}

pub fn sample_patch_size(cfg: &TileConfig, rng: &mut RngStream) -> u32 {
    rng.uniform_inclusive(cfg.d_min, cfg.d_max)
}

/// Draws `count` in-bounds `d x d` locations that avoid the already
/// accepted ones.
///
/// Each patch first gets [`REJECTION_ATTEMPTS_PER_PATCH`] uniform draws; if
/// all collide, the free top-left positions are enumerated and one is chosen
/// uniformly. When no free position remains the layout is restarted, up to
/// [`MAX_LAYOUT_RESTARTS`] times. Tight packings that random growth keeps
/// missing get a jittered lattice layout when `count` cells fit; otherwise
/// the remaining patches are placed uniformly without regard to overlap and
/// the layout is flagged.
pub fn sample_patch_locations(
    img_w: u32,
    img_h: u32,
    d: u32,
    count: usize,
    rng: &mut RngStream,
) -> Result<PatchLayout, TileError> {
    if d == 0 || count == 0 {
        return Err(TileError::InvalidConfig(format!(
            "patch size {d} and count {count} must be positive"
        )));
    }
    if d > img_w.min(img_h) {
        return Err(TileError::PatchTooLarge {
            d,
            width: img_w,
            height: img_h,
        });
    }
    let mut specs: Vec<PatchSpec> = Vec::with_capacity(count);
    for _ in 0..=MAX_LAYOUT_RESTARTS {
        specs.clear();
        while specs.len() < count {
            match place_disjoint(img_w, img_h, d, &specs, rng) {
                Some(s) => specs.push(s),
                None => break,
            }
        }
        if specs.len() == count {
            return Ok(PatchLayout {
                specs,
                overlap_fallback: false,
            });
        }
    }
    if let Some(specs) = grid_layout(img_w, img_h, d, count, rng) {
        return Ok(PatchLayout {
            specs,
            overlap_fallback: false,
        });
    }
    while specs.len() < count {
        specs.push(random_spec(img_w, img_h, d, rng));
    }
    Ok(PatchLayout {
        specs,
        overlap_fallback: true,
    })
}

/// `n` sorted offsets `i·d + r_i` with `r` a sorted uniform sample in `[0, slack]`.
fn jittered_axis(n: u32, d: u32, slack: u32, rng: &mut RngStream) -> Vec<u32> {
    let mut r: Vec<u32> = (0..n).map(|_| rng.uniform_inclusive(0, slack)).collect();
    r.sort_unstable();
    r.into_iter().enumerate().map(|(i, r)| i as u32 * d + r).collect()
}

/// Random cells of a jittered `⌊W/d⌋ x ⌊H/d⌋` lattice; disjoint by construction.
fn grid_layout(img_w: u32, img_h: u32, d: u32, count: usize, rng: &mut RngStream) -> Option<Vec<PatchSpec>> {
    let (gx, gy) = (img_w / d, img_h / d);
    let cells = (gx * gy) as usize;
    if count > cells {
        return None;
    }
    let xs = jittered_axis(gx, d, img_w - gx * d, rng);
    let ys = jittered_axis(gy, d, img_h - gy * d, rng);
    let picks = rng.sample_indices(cells, count);
    Some(
        picks
            .into_iter()
            .map(|c| PatchSpec::new(xs[c % gx as usize], ys[c / gx as usize], d))
            .collect(),
    )
}

/// Whole-layout restarts tried after a placement jams.
pub const MAX_LAYOUT_RESTARTS: usize = 16;

fn random_spec(img_w: u32, img_h: u32, d: u32, rng: &mut RngStream) -> PatchSpec {
    PatchSpec::new(
        rng.uniform_inclusive(0, img_w - d),
        rng.uniform_inclusive(0, img_h - d),
        d,
    )
}

fn place_disjoint(
    img_w: u32,
    img_h: u32,
    d: u32,
    accepted: &[PatchSpec],
    rng: &mut RngStream,
) -> Option<PatchSpec> {
    for _ in 0..REJECTION_ATTEMPTS_PER_PATCH {
        let s = random_spec(img_w, img_h, d, rng);
        if accepted.iter().all(|a| !a.overlaps(&s)) {
            return Some(s);
        }
    }
    // Mark every top-left corner that would collide with an accepted patch.
    let (nx, ny) = ((img_w - d + 1) as usize, (img_h - d + 1) as usize);
    let mut blocked = vec![false; nx * ny];
    for a in accepted {
        let x0 = (a.x + 1).saturating_sub(d) as usize;
        let y0 = (a.y + 1).saturating_sub(d) as usize;
        let x1 = ((a.x + a.d) as usize).min(nx);
        let y1 = ((a.y + a.d) as usize).min(ny);
        for y in y0..y1 {
            blocked[y * nx + x0..y * nx + x1].fill(true);
        }
    }
    let free: Vec<usize> = (0..nx * ny).filter(|&i| !blocked[i]).collect();
    if free.is_empty() {
        return None;
    }
    let k = free[rng.index(free.len())];
    Some(PatchSpec::new((k % nx) as u32, (k / nx) as u32, d))
}

pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}

pub fn vflip(img: &Image) -> Image {
    let h = img.height();
    Image::from_fn(img.width(), h, |x, y| img.get(x, h - 1 - y))
}

/// Quarter turn clockwise.
pub fn rot90(img: &Image) -> Image {
    let h = img.height();
    Image::from_fn(h, img.width(), |x, y| img.get(y, h - 1 - x))
}

pub fn apply_patch_augment(patch: &Image, cfg: &TileConfig, rng: &mut RngStream) -> Image {
    let a = &cfg.augment;
    let mut out = patch.clone();
    if a.hflip > 0.0 && rng.bernoulli(a.hflip) {
        out = hflip(&out);
    }
    if a.vflip > 0.0 && rng.bernoulli(a.vflip) {
        out = vflip(&out);
    }
    if a.rot90 > 0.0 && rng.bernoulli(a.rot90) {
        for _ in 0..rng.index(4) {
            out = rot90(&out);
        }
    }
    out
}

/// Crops each spec, augments it, lays the patches row-major on the canvas
/// and center-crops to `out_size`.
pub fn tile_patches(
    source: &Image,
    specs: &[PatchSpec],
    cfg: &TileConfig,
    rng: &mut RngStream,
) -> Result<Image, TileError> {
    let d = specs
        .first()
        .map(|s| s.d)
        .ok_or(TileError::SpecCountMismatch {
            expected: 1,
            got: 0,
        })?;
    if d == 0 || specs.iter().any(|s| s.d != d) {
        return Err(TileError::InvalidConfig(
            "all patch specs must share one positive side".into(),
        ));
    }
    let g = cfg.grid_side(d) as usize;
    if specs.len() != g * g {
        return Err(TileError::SpecCountMismatch {
            expected: g * g,
            got: specs.len(),
        });
    }
    let du = d as usize;
    let side = g * du;
    let mut canvas: Vec<Rgb> = vec![[0; 3]; side * side];
    for (k, spec) in specs.iter().enumerate() {
        let patch = apply_patch_augment(&source.crop(*spec)?, cfg, rng);
        let (ox, oy) = ((k % g) * du, (k / g) * du);
        for j in 0..du {
            let row = (oy + j) * side + ox;
            for i in 0..du {
                canvas[row + i] = patch.get(i as u32, j as u32);
            }
        }
    }
    let out = cfg.out_size as usize;
    let off = (side - out) / 2;
    Ok(Image::from_fn(cfg.out_size, cfg.out_size, |x, y| {
        canvas[(off + y as usize) * side + off + x as usize]
    }))
}

/// Result of [`generate_patch_negative_detailed`].
#[derive(Debug, Clone)]
pub struct PatchNegative {
    pub image: Image,
    pub d: u32,
    pub layout: PatchLayout,
}

pub fn generate_patch_negative(
    source: &Image,
    cfg: &TileConfig,
    rng: &mut RngStream,
) -> Result<Image, TileError> {
    generate_patch_negative_detailed(source, cfg, rng).map(|n| n.image)
}

pub fn generate_patch_negative_detailed(
    source: &Image,
    cfg: &TileConfig,
    rng: &mut RngStream,
) -> Result<PatchNegative, TileError> {
    let cfg = cfg.clone().validated()?;
    let min_side = source.min_side();
    if min_side < cfg.d_min {
        return Err(TileError::ImageTooSmall {
            width: source.width(),
            height: source.height(),
            d_min: cfg.d_min,
        });
    }
    let d = sample_patch_size(&cfg, rng).min(min_side);
    let g = cfg.grid_side(d) as usize;
    let layout = sample_patch_locations(source.width(), source.height(), d, g * g, rng)?;
    let image = tile_patches(source, &layout.specs, &cfg, rng)?;
    Ok(PatchNegative { image, d, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise_image(w: u32, h: u32, seed: u64) -> Image {
        let mut rng = RngStream::new(seed);
        Image::from_fn(w, h, |_, _| {
            [rng.index(256) as u8, rng.index(256) as u8, rng.index(256) as u8]
        })
    }

    fn off_cfg(d_min: u32, d_max: u32) -> TileConfig {
        TileConfig::new(d_min, d_max)
            .unwrap()
            .with_augment(PatchAugment::OFF)
            .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TileConfig::new(72, 16).is_err());
        assert!(TileConfig::new(0, 16).is_err());
        assert!(TileConfig::new(16, 300).is_err());
        let bad = PatchAugment {
            hflip: 1.5,
            ..PatchAugment::OFF
        };
        assert!(TileConfig::new(16, 72).unwrap().with_augment(bad).is_err());
    }

    #[test]
    fn default_augmentation_follows_patch_range() {
        assert!(TileConfig::new(16, 72).unwrap().augment.is_off());
        let small = TileConfig::new(8, 28).unwrap().augment;
        assert_eq!(small.hflip, 0.5);
        assert_eq!((small.vflip, small.rot90), (0.0, 0.0));
    }

    #[test]
    fn degenerate_size_interval() {
        let cfg = off_cfg(64, 64);
        let mut rng = RngStream::new(1);
        assert!((0..100).all(|_| sample_patch_size(&cfg, &mut rng) == 64));
    }

    #[test]
    fn patch_size_moments() {
        // U{16..72}: mean 44, variance (57^2 - 1) / 12 = 270.
        let cfg = off_cfg(16, 72);
        let mut rng = RngStream::new(2);
        let n = 100_000;
        let draws: Vec<u32> = (0..n).map(|_| sample_patch_size(&cfg, &mut rng)).collect();
        assert!(draws.iter().all(|d| (16..=72).contains(d)));
        let mean = draws.iter().map(|&d| f64::from(d)).sum::<f64>() / n as f64;
        let sigma_mean = (270.0f64 / n as f64).sqrt();
        assert!((mean - 44.0).abs() <= 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn single_legal_placement() {
        let mut rng = RngStream::new(3);
        let layout = sample_patch_locations(224, 224, 224, 1, &mut rng).unwrap();
        assert_eq!(layout.specs, vec![PatchSpec::new(0, 0, 224)]);
        assert!(!layout.overlap_fallback);
    }

    #[test]
    fn four_quadrant_sized_patches_are_disjoint() {
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let layout = sample_patch_locations(224, 224, 112, 4, &mut rng).unwrap();
            assert_eq!(layout.specs.len(), 4);
            for (i, a) in layout.specs.iter().enumerate() {
                assert!(a.x + a.d <= 224 && a.y + a.d <= 224);
                for b in &layout.specs[i + 1..] {
                    assert!(!a.overlaps(b), "{a:?} overlaps {b:?}");
                }
            }
        }
    }

    #[test]
    fn infeasible_layout_falls_back() {
        // 16 * 72^2 = 82944 > 100^2, so disjoint placement is impossible.
        let mut rng = RngStream::new(4);
        let layout = sample_patch_locations(100, 100, 72, 16, &mut rng).unwrap();
        assert_eq!(layout.specs.len(), 16);
        assert!(layout.overlap_fallback);
        assert!(layout.specs.iter().all(|s| s.x + 72 <= 100 && s.y + 72 <= 100));
    }

    #[test]
    fn patch_too_large() {
        let mut rng = RngStream::new(5);
        assert!(matches!(
            sample_patch_locations(50, 80, 64, 1, &mut rng),
            Err(TileError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn flip_and_rotation_permutations() {
        let (a, b, c, d) = ([1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]);
        let img = Image::from_pixels(2, 2, vec![a, b, c, d]).unwrap();
        assert_eq!(hflip(&img).pixels(), &[b, a, d, c]);
        assert_eq!(vflip(&img).pixels(), &[c, d, a, b]);
        assert_eq!(rot90(&img).pixels(), &[c, a, d, b]);
        let noisy = noise_image(7, 7, 6);
        let four = (0..4).fold(noisy.clone(), |acc, _| rot90(&acc));
        assert_eq!(four, noisy);
    }

    #[test]
    fn augment_off_is_identity() {
        let patch = noise_image(9, 9, 7);
        let mut rng = RngStream::new(8);
        assert_eq!(apply_patch_augment(&patch, &off_cfg(4, 9), &mut rng), patch);
    }

    #[test]
    fn augment_with_certain_flip() {
        let patch = noise_image(5, 5, 9);
        let cfg = off_cfg(4, 9)
            .with_augment(PatchAugment {
                hflip: 1.0,
                ..PatchAugment::OFF
            })
            .unwrap();
        let mut rng = RngStream::new(10);
        assert_eq!(apply_patch_augment(&patch, &cfg, &mut rng), hflip(&patch));
    }

    #[test]
    fn single_tile_identity() {
        let src = noise_image(224, 224, 11);
        let cfg = off_cfg(224, 224);
        let mut rng = RngStream::new(12);
        let out = tile_patches(&src, &[PatchSpec::new(0, 0, 224)], &cfg, &mut rng).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn half_size_grid_has_no_crop() {
        let src = noise_image(224, 224, 13);
        let cfg = off_cfg(112, 112);
        let specs = [
            PatchSpec::new(0, 0, 112),
            PatchSpec::new(112, 0, 112),
            PatchSpec::new(0, 112, 112),
            PatchSpec::new(112, 112, 112),
        ];
        let mut rng = RngStream::new(14);
        // Reverse quadrant order to make the layout non-trivial.
        let rev: Vec<_> = specs.iter().rev().copied().collect();
        let out = tile_patches(&src, &rev, &cfg, &mut rng).unwrap();
        for (k, s) in rev.iter().enumerate() {
            let (ox, oy) = ((k as u32 % 2) * 112, (k as u32 / 2) * 112);
            for j in 0..112 {
                for i in 0..112 {
                    assert_eq!(out.get(ox + i, oy + j), src.get(s.x + i, s.y + j));
                }
            }
        }
    }

    #[test]
    fn tile_errors() {
        let src = noise_image(224, 224, 15);
        let cfg = off_cfg(16, 72);
        let mut rng = RngStream::new(16);
        assert!(matches!(
            tile_patches(&src, &[PatchSpec::new(0, 0, 72); 3], &cfg, &mut rng),
            Err(TileError::SpecCountMismatch { expected: 16, got: 3 })
        ));
        assert!(matches!(
            tile_patches(&src, &[PatchSpec::new(200, 0, 72); 16], &cfg, &mut rng),
            Err(TileError::Image(ImageError::OutOfBounds { .. }))
        ));
    }

    #[test]
    fn uniform_source_gives_uniform_output() {
        let src = Image::filled(100, 90, [9, 99, 199]);
        let mut rng = RngStream::new(17);
        let out = generate_patch_negative(&src, &TileConfig::default(), &mut rng).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        assert!(out.pixels().iter().all(|&p| p == [9, 99, 199]));
    }

    #[test]
    fn too_small_source() {
        let src = Image::filled(10, 40, [0; 3]);
        let mut rng = RngStream::new(18);
        assert!(matches!(
            generate_patch_negative(&src, &TileConfig::default(), &mut rng),
            Err(TileError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn sampled_size_is_clamped_to_source() {
        let src = noise_image(20, 30, 19);
        let cfg = off_cfg(16, 72);
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let neg = generate_patch_negative_detailed(&src, &cfg, &mut rng).unwrap();
            assert!(neg.d <= 20);
            let g = 224usize.div_ceil(neg.d as usize);
            assert_eq!(neg.layout.specs.len(), g * g);
        }
    }

    #[test]
    fn output_pixels_come_from_source() {
        let src = noise_image(224, 224, 20);
        let palette: std::collections::HashSet<Rgb> = src.pixels().iter().copied().collect();
        let mut rng = RngStream::new(21);
        let out = generate_patch_negative(&src, &off_cfg(16, 72), &mut rng).unwrap();
        assert!(out.pixels().iter().all(|p| palette.contains(p)));
    }

    #[test]
    fn deterministic_under_seed() {
        let src = noise_image(150, 180, 22);
        let cfg = TileConfig::new(8, 24).unwrap();
        let a = generate_patch_negative(&src, &cfg, &mut RngStream::new(5)).unwrap();
        let b = generate_patch_negative(&src, &cfg, &mut RngStream::new(5)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_shape_and_patch_count(
            w in 16u32..160, h in 16u32..160, d_min in 1u32..16, extra in 0u32..60,
            out in 60u32..128, seed in any::<u64>()
        ) {
            let d_max = (d_min + extra).min(out);
            let cfg = TileConfig::new(d_min, d_max).unwrap().with_out_size(out).unwrap();
            let src = noise_image(w, h, seed);
            let neg = generate_patch_negative_detailed(&src, &cfg, &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!((neg.image.width(), neg.image.height()), (out, out));
            let g = out.div_ceil(neg.d) as usize;
            prop_assert_eq!(neg.layout.specs.len(), g * g);
        }

        #[test]
        fn comfortably_feasible_layouts_are_disjoint(
            d in 4u32..40, count in 1usize..8, seed in any::<u64>()
        ) {
            // Side chosen so that count * d^2 <= half the area.
            let side = (((2 * count) as f64).sqrt() * f64::from(d)).ceil() as u32 + 1;
            let layout = sample_patch_locations(side, side, d, count, &mut RngStream::new(seed)).unwrap();
            prop_assert!(!layout.overlap_fallback);
            for (i, a) in layout.specs.iter().enumerate() {
                for b in &layout.specs[i + 1..] {
                    prop_assert!(!a.overlaps(b));
                }
            }
        }
    }
}
