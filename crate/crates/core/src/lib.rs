//! Gridded cellular-traffic forecasting.
//!
//! The pipeline: ingest raw activity records into a [`grid::TrafficCube`],
//! inspect temporal structure with [`correlation`] diagnostics, cut the cube
//! into multi-scale lag windows with [`windowing`], train the densely
//! connected convolutional regressor in [`nn`] via [`trainer`], and score
//! forecasts with [`evaluation`].

pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod ingest;
pub mod nn;
pub mod trainer;
pub mod windowing;

pub use error::{Error, Result};
