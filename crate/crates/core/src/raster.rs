//! RGB rasters, square patch regions and PNG/JPEG IO.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("patch {spec:?} exceeds {width}x{height} image")]
    OutOfBounds {
        spec: PatchSpec,
        width: u32,
        height: u32,
    },
    #[error("invalid dimensions {width}x{height} for {len} pixels")]
    InvalidDimensions { width: u32, height: u32, len: usize },
}

/// Immutable row-major RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn min_side(&self) -> u32 {
        self.width.min(self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    /// Pixel at column `x`, row `y`.
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn contains(&self, spec: &PatchSpec) -> bool {
        spec.d >= 1
            && u64::from(spec.x) + u64::from(spec.d) <= u64::from(self.width)
            && u64::from(spec.y) + u64::from(spec.d) <= u64::from(self.height)
    }

    /// Copies the `d x d` region at `spec`; output `(i, j)` is input `(x + i, y + j)`.
    pub fn crop(&self, spec: PatchSpec) -> Result<Image, ImageError> {
        if !self.contains(&spec) {
            return Err(ImageError::OutOfBounds {
                spec,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Image::from_fn(spec.d, spec.d, |i, j| {
            self.get(spec.x + i, spec.y + j)
        }))
    }

    /// Raw interleaved RGB bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }
}

/// Square region `(x, y, d)` of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub x: u32,
    pub y: u32,
    pub d: u32,
}

impl PatchSpec {
    pub fn new(x: u32, y: u32, d: u32) -> Self {
        Self { x, y, d }
    }

    pub fn overlaps(&self, other: &PatchSpec) -> bool {
        self.x < other.x + other.d
            && other.x < self.x + self.d
            && self.y < other.y + other.d
            && other.y < self.y + self.d
    }
}

/// Decodes a PNG or JPEG file into RGB. Gray is expanded, alpha dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = image::ImageReader::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::FileNotFound(shown.clone()),
        _ => ImageError::Io(e),
    })?;
    let reader = reader.with_guessed_format()?;
    let decoded = reader.decode().map_err(|e| ImageError::Decode {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    Image::from_pixels(w, h, pixels)
}

/// Writes `image` as an 8-bit RGB PNG.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let buf = image::RgbImage::from_raw(image.width, image.height, image.to_bytes())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => ImageError::Io(io),
            other => ImageError::Io(io::Error::other(other.to_string())),
        })
}
