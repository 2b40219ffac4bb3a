//! Reconstruction of a 3D radiance field from the reflections visible on a
//! person's cornea in fixed-camera photographs.
//!
//! The pipeline models the cornea as an ellipsoid section, precomputes the
//! bundle of camera rays reflected off it, and jointly optimizes a dense 3D
//! scene field, a 2D iris texture field, and per-frame cornea pose
//! corrections against the observed eye crops. A forward simulator provides
//! ground-truth datasets for testing and ablation.
//!
//! Modules:
//! - [`cornea`]: surface model, camera geometry, reflected-ray construction
//! - [`fields`]: dense scene/texture grids, volume rendering, gradients
//! - [`train`]: losses, pose refinement, Adam loop
//! - [`synth`]: synthetic scene renderer and dataset generator
//! - [`ingest`]: image/mask loading, ellipse fitting, dataset parsing
//! - [`metrics`]: SSIM / PSNR
//! - [`checkpoint`], [`config`], [`eval`]: persistence, run configuration,
//!   held-out evaluation

// Validation code writes `!(x > 0.0)` on purpose: the negated comparison is
// the one form that also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod cornea;
pub mod error;
pub mod eval;
pub mod fields;
pub mod img;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod train;
pub mod transform;

pub use error::{Error, ErrorClass, Result};
pub use transform::RigidTransform;
