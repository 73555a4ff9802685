//! Coarse-to-fine facial landmark detection for artwork images.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod landmarks;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod region;
pub mod registration;
pub mod service;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use landmarks::{Group, LandmarkSet, Point, NUM_LANDMARKS};
