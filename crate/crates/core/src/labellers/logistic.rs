use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{require, write_rows, InputKind, LabelDistributionImage, LabelInput, Labeller};
use crate::error::{Error, Result};
use crate::grid::ClassId;
use crate::raster::Raster;
use crate::render::NO_LABEL;
use crate::rng::{stream_rng, tag};

/// Value, gradient magnitude, window variance.
pub const NUM_FEATURES: usize = 3;

/// Features of pixel `(row, col)` over a `window x window` neighbourhood,
/// reading out-of-image neighbours from the nearest edge pixel.
pub fn extract_features(values: &Raster<f64>, row: usize, col: usize, window: usize) -> [f64; NUM_FEATURES] {
    let (r, c) = (row as isize, col as isize);
    let at = |dr: isize, dc: isize| *values.get_clamped(r + dr, c + dc);
    let gx = 0.5 * (at(0, 1) - at(0, -1));
    let gy = 0.5 * (at(1, 0) - at(-1, 0));
    let half = (window / 2) as isize;
    let n = (window * window) as f64;
    let mut sum = 0.0;
    for dr in -half..=half {
        for dc in -half..=half {
            sum += at(dr, dc);
        }
    }
    let mean = sum / n;
    let mut var = 0.0;
    for dr in -half..=half {
        for dc in -half..=half {
            let d = at(dr, dc) - mean;
            var += d * d;
        }
    }
    [at(0, 0), (gx * gx + gy * gy).sqrt(), var / n]
}

/// Multinomial logistic regression: `softmax(W x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    pub num_classes: usize,
    pub num_features: usize,
    /// Row-major `num_classes x num_features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn zeros(num_classes: usize, num_features: usize) -> Self {
        Self {
            num_classes,
            num_features,
            weights: vec![0.0; num_classes * num_features],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Parameter `i`, weights first then biases.
    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.len();
        if i < nw {
            &mut self.weights[i]
        } else {
            &mut self.bias[i - nw]
        }
    }

    /// Class probabilities for one feature vector, written into `out`.
    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let f = self.num_features;
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * f..(k + 1) * f];
            *o = self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        for o in out.iter_mut() {
            *o /= z;
        }
    }

    /// Mean cross-entropy over `samples`.
    pub fn loss(&self, samples: &[(Vec<f64>, ClassId)]) -> f64 {
        let mut p = vec![0.0; self.num_classes];
        let total: f64 = samples
            .iter()
            .map(|(x, y)| {
                self.predict_into(x, &mut p);
                -p[*y as usize].max(f64::MIN_POSITIVE).ln()
            })
            .sum();
        total / samples.len().max(1) as f64
    }

    /// Gradient of [`SoftmaxRegression::loss`], flattened like [`SoftmaxRegression::param`].
    pub fn gradient(&self, samples: &[(Vec<f64>, ClassId)]) -> Vec<f64> {
        let f = self.num_features;
        let nw = self.weights.len();
        let mut g = vec![0.0; self.num_params()];
        let mut p = vec![0.0; self.num_classes];
        for (x, y) in samples {
            self.predict_into(x, &mut p);
            for k in 0..self.num_classes {
                let delta = p[k] - if k == *y as usize { 1.0 } else { 0.0 };
                for j in 0..f {
                    g[k * f + j] += delta * x[j];
                }
                g[nw + k] += delta;
            }
        }
        let n = samples.len().max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: SoftmaxRegression,
    /// Mean cross-entropy over the full training set after the last epoch.
    pub final_loss: f64,
}

/// Mini-batch gradient descent on multinomial cross-entropy from zero weights.
pub fn train_logistic(
    samples: &[(Vec<f64>, ClassId)],
    num_classes: usize,
    hyper: &TrainHyperParams,
) -> Result<TrainedModel> {
    require(!samples.is_empty(), "training needs samples")?;
    require(hyper.batch_size > 0, "batch size must be positive")?;
    require(hyper.learning_rate > 0.0, "learning rate must be positive")?;
    let nf = samples[0].0.len();
    require(samples.iter().all(|(x, _)| x.len() == nf), "ragged feature vectors")?;
    for k in 0..num_classes {
        require(
            samples.iter().any(|(_, y)| *y as usize == k),
            format!("no training sample for class {k}"),
        )?;
    }
    require(
        samples.iter().all(|(_, y)| (*y as usize) < num_classes),
        "sample class out of range",
    )?;

    let mut model = SoftmaxRegression::zeros(num_classes, nf);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for epoch in 0..hyper.epochs {
        let mut rng = stream_rng(hyper.seed, tag::TRAIN, epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let g = model.gradient(&batch);
            for (i, gi) in g.iter().enumerate() {
                *model.param_mut(i) -= hyper.learning_rate * gi;
            }
        }
        let loss = model.loss(samples);
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    let final_loss = model.loss(samples);
    if !final_loss.is_finite() {
        return Err(Error::Diverged { epoch: hyper.epochs });
    }
    Ok(TrainedModel { model, final_loss })
}

/// Largest relative difference between the analytic gradient and central
/// finite differences with step `eps`.
pub fn gradient_check(model: &SoftmaxRegression, samples: &[(Vec<f64>, ClassId)], eps: f64) -> f64 {
    let analytic = model.gradient(samples);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.param(i);
        *probe.param_mut(i) = orig + eps;
        let up = probe.loss(samples);
        *probe.param_mut(i) = orig - eps;
        let down = probe.loss(samples);
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

/// Softmax regression over standardized window features.
///
/// The output at a pixel depends only on inputs within Chebyshev distance
/// `(window - 1) / 2`, so its receptive field is exactly `window`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticLabeller {
    pub kind: InputKind,
    pub window: usize,
    pub feature_mean: [f64; NUM_FEATURES],
    pub feature_std: [f64; NUM_FEATURES],
    pub model: SoftmaxRegression,
}

impl LogisticLabeller {
    pub fn new(kind: InputKind, window: usize, model: SoftmaxRegression) -> Result<Self> {
        require(
            window >= 3 && window % 2 == 1,
            "feature window must be odd and at least 3",
        )?;
        require(
            model.num_features == NUM_FEATURES,
            "model must take the window features",
        )?;
        require(
            model.weights.iter().chain(&model.bias).all(|w| w.is_finite()),
            "weights must be finite",
        )?;
        Ok(Self {
            kind,
            window,
            feature_mean: [0.0; NUM_FEATURES],
            feature_std: [1.0; NUM_FEATURES],
            model,
        })
    }

    /// Trains on labelled images. Every `stride`-th valid pixel (row-major) is used.
    pub fn fit(
        kind: InputKind,
        images: &[(&Raster<f64>, &Raster<ClassId>)],
        num_classes: usize,
        window: usize,
        stride: usize,
        hyper: &TrainHyperParams,
    ) -> Result<(Self, f64)> {
        require(stride > 0, "stride must be positive")?;
        let mut raw = Vec::new();
        for (values, truth) in images {
            values.same_dims(truth)?;
            let mut n = 0usize;
            for r in 0..values.height() {
                for c in 0..values.width() {
                    let y = *truth.get(r, c);
                    if y == NO_LABEL {
                        continue;
                    }
                    if n.is_multiple_of(stride) {
                        raw.push((extract_features(values, r, c, window), y));
                    }
                    n += 1;
                }
            }
        }
        require(!raw.is_empty(), "no labelled pixels to train on")?;
        let count = raw.len() as f64;
        let mut mean = [0.0; NUM_FEATURES];
        let mut std = [0.0; NUM_FEATURES];
        for (x, _) in &raw {
            for j in 0..NUM_FEATURES {
                mean[j] += x[j] / count;
            }
        }
        for (x, _) in &raw {
            for j in 0..NUM_FEATURES {
                std[j] += (x[j] - mean[j]).powi(2) / count;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let samples: Vec<(Vec<f64>, ClassId)> = raw
            .into_iter()
            .map(|(x, y)| ((0..NUM_FEATURES).map(|j| (x[j] - mean[j]) / std[j]).collect(), y))
            .collect();
        let trained = train_logistic(&samples, num_classes, hyper)?;
        let mut labeller = Self::new(kind, window, trained.model)?;
        labeller.feature_mean = mean;
        labeller.feature_std = std;
        Ok((labeller, trained.final_loss))
    }

    /// CSV `class,bias,w_value,w_gradient,w_variance` (weights act on standardized features).
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<()> {
        let f = self.model.num_features;
        write_rows(
            out,
            "class,bias,w_value,w_gradient,w_variance",
            (0..self.model.num_classes).map(|k| {
                let w = &self.model.weights[k * f..(k + 1) * f];
                format!("{k},{},{},{},{}", self.model.bias[k], w[0], w[1], w[2])
            }),
        )
    }
}

impl Labeller for LogisticLabeller {
    fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    fn radius(&self) -> usize {
        self.window / 2
    }

    fn label(&self, input: &LabelInput<'_>) -> Result<LabelDistributionImage> {
        if input.kind != self.kind {
            return Err(Error::InvalidParameter(format!(
                "labeller expects {} input, got {}",
                self.kind.name(),
                input.kind.name()
            )));
        }
        let (w, h) = input.values.dims();
        let mut out = LabelDistributionImage::uniform(w, h, self.model.num_classes);
        let mut x = [0.0; NUM_FEATURES];
        for r in 0..h {
            for c in 0..w {
                let raw = extract_features(input.values, r, c, self.window);
                for j in 0..NUM_FEATURES {
                    x[j] = (raw[j] - self.feature_mean[j]) / self.feature_std[j];
                }
                self.model.predict_into(&x, out.pixel_mut(r, c));
            }
        }
        Ok(out)
    }
}
