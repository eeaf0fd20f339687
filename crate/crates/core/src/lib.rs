//! Semantic height-map reconstruction from simulated depth sequences, with
//! view-based Bayesian label fusion and map-based sliding-window labelling.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod grid;
pub mod labellers;
pub mod mapseg;
pub mod raster;
pub mod render;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
