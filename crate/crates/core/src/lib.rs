//! Graph-convolutional left-ventricle contour regression with simultaneous
//! ejection-fraction estimation and end-diastole / end-systole detection.

pub mod error;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod keypoints;
pub mod layerkit;
pub mod metrics;
pub mod model;
pub mod syndata;
pub mod temporal;
pub mod cli;
pub mod dataset;

pub use error::{Error, Result};
pub use keypoints::KeypointSet;
