//! Class-agnostic detection proposals for forward-looking sonar frames.
//!
//! A small CNN scores the objectness of sliding windows inside the sonar's
//! fan-shaped field of view; thresholding the scores yields proposals. The
//! crate also builds training windows from annotated frames, generates
//! synthetic sonar scenes, and evaluates recall against proposal count.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod neuralnet;
pub mod proposals;
pub mod raster;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
