use std::io;

use thiserror::Error;

/// Errors raised by the simulator, fusion and evaluation stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene too dense: {0}")]
    DensityTooHigh(String),

    #[error("point ({x}, {y}) lies outside the scene extent")]
    OutOfBounds { x: f64, y: f64 },

    #[error("camera at height {camera_z} is below the surface at {surface_z}")]
    CameraBelowSurface { camera_z: f64, surface_z: f64 },

    #[error("distribution is not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("window too small for receptive field: window {window}, receptive field {rf}")]
    WindowTooSmall { window: usize, rf: usize },

    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
