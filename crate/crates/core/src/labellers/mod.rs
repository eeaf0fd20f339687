//! Per-pixel semantic labellers emitting class distributions.
//!
//! Two families implement [`Labeller`]: [`CorruptionLabeller`] degrades
//! ground truth in a controlled, calibratable way, and [`LogisticLabeller`]
//! is a trained softmax regression over local window features.

mod corruption;
mod logistic;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use corruption::{calibrate_base_accuracy, uniform_off_diagonal, CorruptionLabeller, CorruptionParams};
pub use logistic::{
    extract_features, gradient_check, train_logistic, LogisticLabeller, SoftmaxRegression, TrainHyperParams,
    TrainedModel, NUM_FEATURES,
};

use crate::error::{Error, Result};
use crate::grid::{argmax_lowest, ClassId};
use crate::raster::Raster;

/// What the input raster holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Camera depth image (view-based labelling).
    Depth,
    /// Reconstructed height map (map-based labelling).
    Height,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::Depth => "depth",
            InputKind::Height => "height",
        }
    }
}

/// Image handed to a labeller, possibly a crop of a larger frame.
#[derive(Clone, Copy, Debug)]
pub struct LabelInput<'a> {
    pub kind: InputKind,
    pub values: &'a Raster<f64>,
    /// Uncorrupted version of `values`; `|values - reference|` is the input degradation.
    pub reference: Option<&'a Raster<f64>>,
    /// Ground-truth classes; required by oracle labellers. `NO_LABEL` marks invalid pixels.
    pub truth: Option<&'a Raster<ClassId>>,
    /// Random-stream key, e.g. the frame index or map pass number.
    pub stream: u64,
    /// `(row, col)` of this raster's top-left pixel within the full frame.
    pub offset: (usize, usize),
    /// Width of the full frame, used to derive global pixel keys.
    pub frame_width: usize,
}

impl<'a> LabelInput<'a> {
    pub fn whole(kind: InputKind, values: &'a Raster<f64>) -> Self {
        Self {
            kind,
            values,
            reference: None,
            truth: None,
            stream: 0,
            offset: (0, 0),
            frame_width: values.width(),
        }
    }

    pub fn with_reference(mut self, reference: &'a Raster<f64>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_truth(mut self, truth: &'a Raster<ClassId>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    /// Global pixel index of local `(row, col)`.
    #[inline]
    pub fn pixel_key(&self, row: usize, col: usize) -> u64 {
        ((row + self.offset.0) * self.frame_width + col + self.offset.1) as u64
    }

    fn check_shapes(&self) -> Result<()> {
        if let Some(r) = self.reference {
            self.values.same_dims(r)?;
        }
        if let Some(t) = self.truth {
            self.values.same_dims(t)?;
        }
        Ok(())
    }
}

/// Per-pixel categorical distributions, row-major with `num_classes` entries per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistributionImage {
    width: usize,
    height: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl LabelDistributionImage {
    pub fn uniform(width: usize, height: usize, num_classes: usize) -> Self {
        Self {
            width,
            height,
            num_classes,
            probs: vec![1.0 / num_classes as f64; width * height * num_classes],
        }
    }

    /// Wraps row-major probabilities, `num_classes` per pixel.
    pub fn from_vec(width: usize, height: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if num_classes < 2 || probs.len() != width * height * num_classes {
            return Err(Error::InvalidDimensions(format!(
                "{} probabilities do not fit {width}x{height} pixels with {num_classes} classes",
                probs.len()
            )));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            probs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.num_classes;
        &self.probs[i..i + self.num_classes]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.num_classes;
        &mut self.probs[i..i + self.num_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Most probable class per pixel, lowest index on ties.
    pub fn argmax(&self) -> Raster<ClassId> {
        Raster::from_fn(self.width, self.height, |r, c| {
            argmax_lowest(self.pixel(r, c)) as ClassId
        })
    }

    /// Largest deviation of any pixel sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.probs
            .chunks_exact(self.num_classes)
            .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Copies `src` rows `src_rows` and columns `src_cols` into this image at `(dst_row, dst_col)`.
    pub(crate) fn blit(
        &mut self,
        src: &LabelDistributionImage,
        src_rows: std::ops::Range<usize>,
        src_cols: std::ops::Range<usize>,
        dst_row: usize,
        dst_col: usize,
    ) {
        let c = self.num_classes;
        let n = src_cols.len() * c;
        for (k, sr) in src_rows.enumerate() {
            let s = (sr * src.width + src_cols.start) * c;
            let d = ((dst_row + k) * self.width + dst_col) * c;
            self.probs[d..d + n].copy_from_slice(&src.probs[s..s + n]);
        }
    }
}

/// A per-pixel classifier.
pub trait Labeller: Sync {
    fn num_classes(&self) -> usize;

    /// Chebyshev radius of input pixels that can influence one output pixel.
    fn radius(&self) -> usize;

    fn label(&self, input: &LabelInput<'_>) -> Result<LabelDistributionImage>;
}

/// Serializable choice of labeller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabellerConfig {
    Corruption(CorruptionParams),
    Logistic(LogisticLabeller),
}

impl LabellerConfig {
    pub fn build(&self) -> Result<Box<dyn Labeller>> {
        Ok(match self {
            LabellerConfig::Corruption(p) => Box::new(CorruptionLabeller::new(p.clone())?),
            LabellerConfig::Logistic(l) => Box::new(l.clone()),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn write_rows<W: Write>(mut out: W, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg.into()))
    }
}
