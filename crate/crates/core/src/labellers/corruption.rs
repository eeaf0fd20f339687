use serde::{Deserialize, Serialize};

use super::{require, LabelDistributionImage, LabelInput, Labeller};
use crate::error::{Error, Result};
use crate::eval::IoUAccumulator;
use crate::grid::ClassId;
use crate::render::NO_LABEL;
use crate::rng::{mix_key, unit_draw};

/// Parameters of the oracle-corruption labeller.
///
/// Per pixel, an error fires with probability
/// `clamp(1 - base_accuracy + noise_sensitivity * degradation + boost, 0, 1 - 1/C)`
/// where `boost = boundary_boost` if a pixel of another class lies within
/// `boundary_band` (Chebyshev), else 0. On error the emitted class is drawn
/// from the confusion row of the true class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    pub num_classes: usize,
    pub base_accuracy: f64,
    pub boundary_band: usize,
    pub boundary_boost: f64,
    /// Row-stochastic `C x C` matrix; row `k` is the error distribution for true class `k`.
    pub confusion: Vec<Vec<f64>>,
    /// Added error probability per metre of input degradation.
    pub noise_sensitivity: f64,
    /// Probability mass placed on the emitted class.
    pub confidence: f64,
    pub seed: u64,
}

impl CorruptionParams {
    /// Perfect labeller: no errors, confidence 0.9, off-diagonal uniform confusion.
    pub fn perfect(num_classes: usize, seed: u64) -> Self {
        Self {
            num_classes,
            base_accuracy: 1.0,
            boundary_band: 0,
            boundary_boost: 0.0,
            confusion: uniform_off_diagonal(num_classes),
            noise_sensitivity: 0.0,
            confidence: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        require(c >= 2, "corruption labeller needs at least 2 classes")?;
        if !(self.base_accuracy > 1.0 / c as f64 && self.base_accuracy <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "base accuracy {} must lie in (1/C, 1]",
                self.base_accuracy
            )));
        }
        require(self.noise_sensitivity >= 0.0, "noise sensitivity must be nonnegative")?;
        require(self.boundary_boost >= 0.0, "boundary boost must be nonnegative")?;
        require(
            self.confidence >= 1.0 / c as f64 - 1e-12 && self.confidence <= 1.0,
            "confidence must lie in [1/C, 1]",
        )?;
        require(self.confusion.len() == c, "confusion matrix must have C rows")?;
        for row in &self.confusion {
            require(row.len() == c, "confusion matrix must be C x C")?;
            require(row.iter().all(|&p| p >= 0.0), "confusion entries must be nonnegative")?;
            require(
                (row.iter().sum::<f64>() - 1.0).abs() < 1e-9,
                "confusion rows must sum to 1",
            )?;
        }
        Ok(())
    }
}

/// Confusion matrix sending errors uniformly to the other classes.
pub fn uniform_off_diagonal(c: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|i| {
            (0..c)
                .map(|j| if i == j { 0.0 } else { 1.0 / (c - 1) as f64 })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CorruptionLabeller {
    params: CorruptionParams,
}

impl CorruptionLabeller {
    pub fn new(params: CorruptionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &CorruptionParams {
        &self.params
    }

    fn near_boundary(&self, truth: &crate::raster::Raster<ClassId>, row: usize, col: usize) -> bool {
        let band = self.params.boundary_band;
        if band == 0 {
            return false;
        }
        let own = *truth.get(row, col);
        let r0 = row.saturating_sub(band);
        let r1 = (row + band).min(truth.height() - 1);
        let c0 = col.saturating_sub(band);
        let c1 = (col + band).min(truth.width() - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let l = *truth.get(r, c);
                if l != own && l != NO_LABEL {
                    return true;
                }
            }
        }
        false
    }
}

impl Labeller for CorruptionLabeller {
    fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    fn radius(&self) -> usize {
        self.params.boundary_band
    }

    fn label(&self, input: &LabelInput<'_>) -> Result<LabelDistributionImage> {
        input.check_shapes()?;
        let truth = input
            .truth
            .ok_or_else(|| Error::InvalidParameter("corruption labeller needs ground truth".into()))?;
        let p = &self.params;
        let c = p.num_classes;
        let max_err = 1.0 - 1.0 / c as f64;
        let other = (1.0 - p.confidence) / (c - 1) as f64;
        let key = mix_key(&[p.seed, input.stream]);
        let (w, h) = input.values.dims();
        let mut out = LabelDistributionImage::uniform(w, h, c);
        for row in 0..h {
            for col in 0..w {
                let gt = *truth.get(row, col);
                if gt == NO_LABEL {
                    continue;
                }
                if gt as usize >= c {
                    return Err(Error::InvalidParameter(format!("ground truth class {gt} >= C")));
                }
                let degradation = input.reference.map_or(0.0, |r| {
                    let d = (input.values.get(row, col) - r.get(row, col)).abs();
                    if d.is_finite() {
                        d
                    } else {
                        f64::INFINITY
                    }
                });
                let boost = if self.near_boundary(truth, row, col) {
                    p.boundary_boost
                } else {
                    0.0
                };
                let err = (1.0 - p.base_accuracy + p.noise_sensitivity * degradation + boost).clamp(0.0, max_err);
                let pixel = input.pixel_key(row, col);
                let chosen = if unit_draw(key, 2 * pixel) < err {
                    let u = unit_draw(key, 2 * pixel + 1);
                    let row_probs = &p.confusion[gt as usize];
                    let mut acc = 0.0;
                    let mut pick = gt as usize;
                    for (k, &q) in row_probs.iter().enumerate() {
                        if q <= 0.0 {
                            continue;
                        }
                        acc += q;
                        pick = k;
                        if u < acc {
                            break;
                        }
                    }
                    pick
                } else {
                    gt as usize
                };
                let dist = out.pixel_mut(row, col);
                dist.fill(other);
                dist[chosen] = p.confidence;
            }
        }
        Ok(out)
    }
}

/// Finds the base accuracy whose mIoU, pooled over `samples`, matches
/// `target`, by bisection over `(1/C, 1]`. Other parameters are taken from `template`.
pub fn calibrate_base_accuracy(template: &CorruptionParams, samples: &[LabelInput<'_>], target: f64) -> Result<f64> {
    require(!samples.is_empty(), "calibration needs samples")?;
    let score = |acc: f64| -> Result<f64> {
        let labeller = CorruptionLabeller::new(CorruptionParams {
            base_accuracy: acc,
            ..template.clone()
        })?;
        let mut pooled = IoUAccumulator::default();
        for s in samples {
            let truth = s
                .truth
                .ok_or_else(|| Error::InvalidParameter("calibration samples need ground truth".into()))?;
            pooled.add(&labeller.label(s)?.argmax(), truth, NO_LABEL)?;
        }
        Ok(pooled.report()?.mean)
    };
    let c = template.num_classes as f64;
    let mut lo = 1.0 / c + 1e-9;
    let mut hi = 1.0;
    if score(hi)? <= target {
        return Ok(hi);
    }
    if score(lo)? >= target {
        return Ok(lo);
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if score(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labellers::InputKind;
    use crate::raster::Raster;

    fn params(base: f64, band: usize) -> CorruptionParams {
        CorruptionParams {
            base_accuracy: base,
            boundary_band: band,
            boundary_boost: 0.5,
            ..CorruptionParams::perfect(4, 17)
        }
    }

    #[test]
    fn perfect_labeller_reproduces_truth() {
        let truth = Raster::from_fn(20, 10, |r, c| ((r / 3 + c / 5) % 4) as ClassId);
        let values = Raster::filled(20, 10, 0.0);
        let l = CorruptionLabeller::new(CorruptionParams::perfect(4, 1)).unwrap();
        let out = l
            .label(&LabelInput::whole(InputKind::Height, &values).with_truth(&truth))
            .unwrap();
        assert_eq!(out.argmax(), truth);
        assert!(out.max_normalization_error() < 1e-12);
        assert!((out.pixel(0, 0)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn interior_accuracy_matches_base() {
        let truth = Raster::filled(400, 250, 2u8);
        let values = Raster::filled(400, 250, 0.0);
        let l = CorruptionLabeller::new(params(0.95, 2)).unwrap();
        let out = l
            .label(&LabelInput::whole(InputKind::Depth, &values).with_truth(&truth))
            .unwrap();
        let acc = out.argmax().iter().filter(|&&x| x == 2).count() as f64 / 100_000.0;
        assert!((acc - 0.95).abs() < 0.01, "accuracy {acc}");
    }

    #[test]
    fn maximal_corruption_is_uniform() {
        let c = 4;
        let p = CorruptionParams {
            base_accuracy: 0.26,
            confusion: vec![vec![0.25; c]; c],
            confidence: 0.25,
            ..CorruptionParams::perfect(c, 3)
        };
        let truth = Raster::filled(8, 8, 1u8);
        let values = Raster::filled(8, 8, 0.0);
        let out = CorruptionLabeller::new(p)
            .unwrap()
            .label(&LabelInput::whole(InputKind::Depth, &values).with_truth(&truth))
            .unwrap();
        assert!(out.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn degenerate_params_are_rejected() {
        assert!(CorruptionLabeller::new(params(0.25, 0)).is_err());
        let mut p = params(0.9, 0);
        p.confusion[1][2] += 0.1;
        assert!(CorruptionLabeller::new(p).is_err());
        let mut p = params(0.9, 0);
        p.noise_sensitivity = -1.0;
        assert!(CorruptionLabeller::new(p).is_err());
    }

    #[test]
    fn degradation_raises_error_rate() {
        let truth = Raster::filled(200, 100, 1u8);
        let clean = Raster::filled(200, 100, 0.3);
        let noisy = Raster::filled(200, 100, 0.31);
        let mut p = params(1.0, 0);
        p.noise_sensitivity = 30.0; // 0.01 m -> 0.3
        let l = CorruptionLabeller::new(p).unwrap();
        let out = l
            .label(
                &LabelInput::whole(InputKind::Depth, &noisy)
                    .with_reference(&clean)
                    .with_truth(&truth),
            )
            .unwrap();
        let acc = out.argmax().iter().filter(|&&x| x == 1).count() as f64 / 20_000.0;
        assert!((acc - 0.7).abs() < 0.015, "accuracy {acc}");
    }

    #[test]
    fn boundary_band_concentrates_errors() {
        let truth = Raster::from_fn(100, 100, |_, c| if c < 50 { 0 } else { 1 });
        let values = Raster::filled(100, 100, 0.0);
        let l = CorruptionLabeller::new(params(1.0, 2)).unwrap();
        let out = l
            .label(&LabelInput::whole(InputKind::Height, &values).with_truth(&truth))
            .unwrap();
        let pred = out.argmax();
        for r in 0..100 {
            for c in 0..100 {
                if !(48..52).contains(&c) {
                    assert_eq!(pred.get(r, c), truth.get(r, c));
                }
            }
        }
        let band_errors = (0..100)
            .flat_map(|r| (48..52).map(move |c| (r, c)))
            .filter(|&(r, c)| pred.get(r, c) != truth.get(r, c))
            .count();
        assert!(band_errors > 100, "{band_errors}");
    }

    #[test]
    fn invalid_pixels_stay_uniform() {
        let mut truth = Raster::filled(4, 4, 1u8);
        truth.set(2, 2, NO_LABEL);
        let values = Raster::filled(4, 4, 0.0);
        let l = CorruptionLabeller::new(params(0.9, 1)).unwrap();
        let out = l
            .label(&LabelInput::whole(InputKind::Depth, &values).with_truth(&truth))
            .unwrap();
        assert!(out.pixel(2, 2).iter().all(|&x| x == 0.25));
    }

    #[test]
    fn calibration_hits_target() {
        let truth = Raster::from_fn(120, 90, |r, c| {
            if (30..60).contains(&r) && (40..90).contains(&c) {
                2
            } else {
                0
            }
        });
        let values = Raster::filled(120, 90, 0.0);
        let sample = LabelInput::whole(InputKind::Depth, &values).with_truth(&truth);
        // errors stay within the two classes present
        let template = CorruptionParams {
            confusion: vec![
                vec![0.0, 0.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
            ],
            ..params(0.9, 1)
        };
        let acc = calibrate_base_accuracy(&template, &[sample], 0.85).unwrap();
        let l = CorruptionLabeller::new(CorruptionParams {
            base_accuracy: acc,
            ..template
        })
        .unwrap();
        let miou = crate::eval::mean_iou(&l.label(&sample).unwrap().argmax(), &truth, NO_LABEL)
            .unwrap()
            .mean;
        assert!((miou - 0.85).abs() < 0.01, "{acc} -> {miou}");
    }
}
