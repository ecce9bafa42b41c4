//! Boundary-point text spotting at desk scale.
//!
//! Text instances are described by `K` points on each long side. A small
//! convolutional regressor predicts those points from an oriented crop, a
//! thin-plate spline flattens the region between them, and an attention GRU
//! reads the flattened crop.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod micronet;
pub mod model;
pub mod rectify;

pub use error::{Error, Result};
