//! Gaze estimation from synthetic face/eye images with transformer-based
//! feature fusion and per-dataset gaze adaptation.
//!
//! The crate builds a complete desk-scale pipeline:
//!
//! * [`tape`] — reverse-mode autodiff over dense `f64` tensors;
//! * [`nn`] — linear / MLP / multi-head attention / transformer encoder
//!   layers and a small conv backbone;
//! * [`ttgf`] — the two-stage gaze-feature fusion estimator and the
//!   alternative fusion topologies;
//! * [`gam`] — per-dataset gaze offset heads with a parameter-free anchor;
//! * [`geom`] — angle/vector conversions, the angular error metric, and the
//!   annotation-perturbation model;
//! * [`synth`] — deterministic scene rendering and multi-dataset
//!   generation, storage, and equal-composition batch sampling;
//! * [`train`] — L1 objective, AdamW with warmup + exponential decay,
//!   train/eval loops, and run artifacts;
//! * [`gradcheck`] — central-finite-difference verification of every
//!   gradient path.

pub mod config;
pub mod error;
pub mod gam;
pub mod geom;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rngs;
pub mod serialize;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod ttgf;

pub use error::{Error, Result};
