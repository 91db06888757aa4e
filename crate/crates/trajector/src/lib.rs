//! Detection of manipulated (Deepfake) face videos from 2D facial-landmark
//! tracks.
//!
//! The pipeline fits a PCA face model with an affine camera to every frame,
//! frontalizes the landmarks so facial expression is decoupled from rigid head
//! motion, builds two per-video feature streams (expression and head pose),
//! analyzes them as first-frame-relative phase-space trajectories, classifies
//! each stream with a small transformer encoder trained from scratch, and
//! fuses the two stream verdicts with Dempster-Shafer evidence theory.
//!
//! The crate is a library plus a `trajector` CLI wiring the stages end to end;
//! see [`pipeline`] for the orchestration entry points.

pub mod error;
pub mod eval;
pub mod face3d;
pub mod features;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod par;
pub mod phase;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
