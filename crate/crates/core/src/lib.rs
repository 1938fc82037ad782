//! Light-field super-resolution.
//!
//! A light field is stored as lenslet regions (`A x A` angular samples behind
//! each of `H x W` lenslets). Two small CNNs work directly on those regions:
//!
//! * the angular network maps each `A x A` lenslet to `2A x 2A`, doubling the
//!   number of perspective views per axis;
//! * the spatial network reads four neighbouring lenslets and predicts the
//!   three sub-pixels (horizontal, vertical, diagonal) that double the
//!   resolution of one perspective image.
//!
//! Bicubic and nearest-neighbour baselines, PSNR/SSIM evaluation and a
//! from-scratch training engine round out the crate.

pub mod angular;
pub mod baseline;
pub mod container;
pub mod error;
pub mod fsutil;
pub mod lightfield;
pub mod metrics;
pub mod nn;
pub mod resample;
pub mod spatial;
pub mod synthetic;

pub use angular::AngularNetBundle;
pub use baseline::Baseline;
pub use error::{Error, Result};
pub use lightfield::{Image, LensletRegion, LightField, PerspectiveImage};
pub use metrics::EvalReport;
pub use nn::{Network, NetworkConfig, TrainConfig};
pub use spatial::{SpatialNetKey, SpatialNetRegistry};
