//! Non-semantic negative samples for contrastive learning.
//!
//! The crate covers three pieces of work:
//!
//! * building negatives that keep only superficial image content, either by
//!   tiling randomly placed patches ([`patch_tile`]) or by copy-based texture
//!   synthesis ([`texture_synth`]);
//! * the alpha-weighted contrastive losses and their analytic gradients
//!   ([`losses`]);
//! * analysis tooling ([`analysis`]) and a small linear-encoder trainer
//!   ([`toy_trainer`]) that reproduces the qualitative training dynamics.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`). The `*64` aliases
//! below are the concrete types used throughout the CLI and tests.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod embedding;
pub mod embedding_io;
pub mod losses;
pub mod patch_tile;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod texture_synth;
pub mod toy_trainer;

pub use embedding::{Embedding, EmbeddingError};
pub use raster::{Image, ImageError, PatchSpec, Rgb};
pub use rng::{derive_seed, RngStream};
pub use scalar::Scalar;

pub type Embedding64 = embedding::Embedding<f64>;
pub type Embedding32 = embedding::Embedding<f32>;
pub type ContrastiveBatch64 = losses::ContrastiveBatch<f64>;
pub type ContrastiveBatch32 = losses::ContrastiveBatch<f32>;
pub type LossConfig64 = losses::LossConfig<f64>;
pub type LossConfig32 = losses::LossConfig<f32>;
pub type LinearEncoder64 = toy_trainer::LinearEncoder<f64>;
pub type LinearEncoder32 = toy_trainer::LinearEncoder<f32>;
pub type TrainConfig64 = toy_trainer::TrainConfig<f64>;
