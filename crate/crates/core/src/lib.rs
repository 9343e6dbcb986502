//! Sampling toolkit for low-sample volume rendering of signed-distance scenes.
//!
//! The pipeline: a dense low-resolution [`render::render_probe`] feeds a
//! [`proposal::ProposalNet`] that predicts per-pixel depth distributions at
//! high resolution; [`sampling`] turns those into robust stratified samples
//! with adaptive per-pixel budgets; [`losses`] holds the geometry
//! regularizers and [`harness`] the benchmark and configuration plumbing.

pub mod error;
pub mod exec;
pub mod geom;
pub mod harness;
pub mod losses;
pub mod proposal;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
pub use exec::Executor;
pub use geom::{Dir3, Point3};
