//! Geometric and semantic fusion of view measurements into a [`HeightField`].
//!
//! Semantic fusion is a per-vertex Bayesian update. A pixel whose
//! backprojected point lands in a triangle contributes to that triangle's
//! three vertices with likelihood
//!
//! ```text
//! g(m, v, d) = exp(-αd)·a + b                  if m == v
//!            = (1 - exp(-αd)·a - b) / (C - 1)  otherwise,   a = (C-1)/C, b = 1/C
//! ḡ(m_u, v, d) = Σ_c g(c, v, d)·m_u(c)
//! ```
//!
//! where `d` is the vertex-to-point distance. Log-likelihoods of one frame are
//! summed per vertex in pixel order, added to the log-posterior and
//! renormalized.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{normalize_log, ClassId, HeightField};
use crate::labellers::{InputKind, LabelDistributionImage, LabelInput, Labeller};
use crate::raster::Raster;
use crate::render::{backproject, perturb_depth, perturb_pose, CameraPose, Intrinsics, NoiseModel, ViewFrame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// 3D distance between the vertex (at its current height) and the point.
    #[default]
    Euclidean,
    /// Horizontal distance only.
    Horizontal,
}

/// Distance-decay measurement model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    /// Decay rate (1/m).
    pub alpha: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub distance: DistanceMode,
}

impl DecayModel {
    pub fn new(alpha: f64, num_classes: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("decay rate must be >= 0, got {alpha}")));
        }
        if num_classes < 2 {
            return Err(Error::InvalidParameter("decay model needs C >= 2".into()));
        }
        Ok(Self {
            alpha,
            num_classes,
            distance: DistanceMode::Euclidean,
        })
    }

    pub fn a(&self) -> f64 {
        (self.num_classes - 1) as f64 / self.num_classes as f64
    }

    pub fn b(&self) -> f64 {
        1.0 / self.num_classes as f64
    }

    /// `(g_match, g_mismatch)` at distance `d`.
    ///
    /// Written as `1 - a(1 - e)` and `(1 - e)/C` with `e = exp(-αd)`, which
    /// equal the textbook forms and give exactly 1 and 0 at `d = 0`.
    #[inline]
    pub fn match_mismatch(&self, d: f64) -> (f64, f64) {
        let one_minus_e = -(-self.alpha * d).exp_m1();
        let c = self.num_classes as f64;
        (1.0 - self.a() * one_minus_e, one_minus_e / c)
    }
}

/// Likelihood of measuring class `measured` at distance `d` from a vertex of class `vertex`.
pub fn decay_g(measured: ClassId, vertex: ClassId, d: f64, model: &DecayModel) -> f64 {
    let (hit, miss) = model.match_mismatch(d);
    if measured == vertex {
        hit
    } else {
        miss
    }
}

/// Expected [`decay_g`] under a measured class distribution.
pub fn decay_g_bar(measurement: &[f64], vertex: ClassId, d: f64, model: &DecayModel) -> Result<f64> {
    let sum: f64 = measurement.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || measurement.len() != model.num_classes {
        return Err(Error::Unnormalized(sum));
    }
    Ok(measurement
        .iter()
        .enumerate()
        .map(|(c, &m)| decay_g(c as ClassId, vertex, d, model) * m)
        .sum())
}

/// Counters from fusing one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionStats {
    pub fused: usize,
    /// Valid pixels whose point fell outside the grid.
    pub skipped: usize,
    /// Pixels with invalid depth.
    pub invalid: usize,
}

/// Incremental barycentric-weighted mean of point heights.
pub fn fuse_height(field: &mut HeightField, depth: &Raster<f64>, intr: &Intrinsics, pose: &CameraPose) -> FusionStats {
    let mut stats = FusionStats::default();
    let spec = field.spec();
    let (heights, weights) = field.heights_mut();
    for row in 0..depth.height() {
        for col in 0..depth.width() {
            let d = *depth.get(row, col);
            if d <= 0.0 {
                stats.invalid += 1;
                continue;
            }
            let p = backproject(pose, intr, row, col, d);
            let Some(loc) = crate::grid::locate_in(&spec, p.x, p.y) else {
                stats.skipped += 1;
                continue;
            };
            for (&(r, c), &w) in loc.vertices.iter().zip(&loc.weights) {
                if w <= 0.0 {
                    continue;
                }
                let i = r * spec.width + c;
                weights[i] += w;
                heights[i] += w * (p.z - heights[i]) / weights[i];
            }
            stats.fused += 1;
        }
    }
    stats
}

/// Scratch space for per-frame likelihood accumulation.
#[derive(Default)]
pub struct SemanticScratch {
    acc: Vec<f64>,
    touched: Vec<usize>,
    mark: Vec<bool>,
    lik: Vec<f64>,
}

/// Bayesian label fusion of one frame.
pub fn fuse_semantic(
    field: &mut HeightField,
    depth: &Raster<f64>,
    labels: &LabelDistributionImage,
    intr: &Intrinsics,
    pose: &CameraPose,
    model: &DecayModel,
) -> Result<FusionStats> {
    fuse_semantic_with(field, depth, labels, intr, pose, model, &mut SemanticScratch::default())
}

pub fn fuse_semantic_with(
    field: &mut HeightField,
    depth: &Raster<f64>,
    labels: &LabelDistributionImage,
    intr: &Intrinsics,
    pose: &CameraPose,
    model: &DecayModel,
    scratch: &mut SemanticScratch,
) -> Result<FusionStats> {
    let c = field.num_classes();
    if labels.num_classes() != c || model.num_classes != c {
        return Err(Error::InvalidParameter(format!(
            "class count mismatch: field {c}, labels {}, model {}",
            labels.num_classes(),
            model.num_classes
        )));
    }
    if labels.dims() != depth.dims() {
        return Err(Error::ShapeMismatch {
            expected: depth.dims(),
            actual: labels.dims(),
        });
    }
    let n = field.num_vertices();
    if scratch.mark.len() != n || scratch.acc.len() != n * c {
        scratch.acc = vec![0.0; n * c];
        scratch.mark = vec![false; n];
        scratch.touched.clear();
    }
    scratch.lik.resize(c, 0.0);
    let spec = field.spec();
    let mut stats = FusionStats::default();

    for row in 0..depth.height() {
        for col in 0..depth.width() {
            let dep = *depth.get(row, col);
            if dep <= 0.0 {
                stats.invalid += 1;
                continue;
            }
            let m = labels.pixel(row, col);
            let total: f64 = m.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Unnormalized(total));
            }
            let p = backproject(pose, intr, row, col, dep);
            let Some(loc) = crate::grid::locate_in(&spec, p.x, p.y) else {
                stats.skipped += 1;
                continue;
            };
            for &(r, cc) in &loc.vertices {
                let i = r * spec.width + cc;
                let (vx, vy) = field.vertex_xy(r, cc);
                let dx = vx - p.x;
                let dy = vy - p.y;
                let d = match model.distance {
                    DistanceMode::Euclidean => {
                        let dz = field.heights()[i] - p.z;
                        (dx * dx + dy * dy + dz * dz).sqrt()
                    }
                    DistanceMode::Horizontal => (dx * dx + dy * dy).sqrt(),
                };
                let (hit, miss) = model.match_mismatch(d);
                // ḡ(v) = hit·m(v) + miss·(Σm - m(v))
                for (v, l) in scratch.lik.iter_mut().enumerate() {
                    *l = hit * m[v] + miss * (total - m[v]);
                }
                let acc = &mut scratch.acc[i * c..(i + 1) * c];
                for (a, l) in acc.iter_mut().zip(&scratch.lik) {
                    *a += l.ln();
                }
                if !scratch.mark[i] {
                    scratch.mark[i] = true;
                    scratch.touched.push(i);
                }
            }
            stats.fused += 1;
        }
    }

    for &i in &scratch.touched {
        let acc = &mut scratch.acc[i * c..(i + 1) * c];
        let post = field.log_posterior_mut(i);
        let mut updated: Vec<f64> = post.iter().zip(acc.iter()).map(|(p, a)| p + a).collect();
        // a frame that rules out every class leaves the vertex unchanged
        if normalize_log(&mut updated) {
            post.copy_from_slice(&updated);
        }
        acc.fill(0.0);
        scratch.mark[i] = false;
    }
    scratch.touched.clear();
    Ok(stats)
}

/// Wall-clock and counters for one processed frame (milliseconds).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub t_load: f64,
    pub t_reconstruct: f64,
    pub t_label: f64,
    pub t_fuse: f64,
    pub fused: usize,
    pub skipped: usize,
    /// Labeller pixel evaluations spent on this frame.
    pub pixel_evals: u64,
}

pub const FRAME_LOG_HEADER: &str = "frame,t_load,t_reconstruct,t_label,t_fuse,pixels_fused,pixels_skipped";

pub fn write_frame_log<W: Write>(mut out: W, records: &[FrameRecord]) -> Result<()> {
    writeln!(out, "{FRAME_LOG_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.frame, r.t_load, r.t_reconstruct, r.t_label, r.t_fuse, r.fused, r.skipped
        )?;
    }
    Ok(())
}

/// Per-frame reconstruction with optional view-based labelling.
///
/// Each frame's pose and depth are perturbed by the noise model, heights are
/// fused, and (when a labeller is present and the frame is due) the noisy
/// depth is labelled and fused semantically with the perturbed pose.
pub struct ViewPipeline<'a> {
    pub field: HeightField,
    labeller: Option<&'a dyn Labeller>,
    decay: DecayModel,
    noise: NoiseModel,
    intrinsics: Intrinsics,
    label_every: usize,
    scratch: SemanticScratch,
    frames_seen: usize,
}

impl<'a> ViewPipeline<'a> {
    pub fn new(
        field: HeightField,
        labeller: Option<&'a dyn Labeller>,
        decay: DecayModel,
        noise: NoiseModel,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        noise.validate()?;
        if let Some(l) = labeller {
            if l.num_classes() != field.num_classes() {
                return Err(Error::InvalidParameter("labeller and field class counts differ".into()));
            }
        }
        Ok(Self {
            field,
            labeller,
            decay,
            noise,
            intrinsics,
            label_every: 1,
            scratch: SemanticScratch::default(),
            frames_seen: 0,
        })
    }

    /// Label only every `n`-th frame (keyframing); geometry still fuses every frame.
    pub fn with_label_every(mut self, n: usize) -> Self {
        self.label_every = n.max(1);
        self
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn process(&mut self, frame: &ViewFrame) -> Result<FrameRecord> {
        let idx = frame.index;
        let t0 = Instant::now();
        let pose = perturb_pose(&frame.pose, &self.noise, idx);
        let depth = perturb_depth(&frame.depth, &self.noise, idx);
        let t1 = Instant::now();
        let geo = fuse_height(&mut self.field, &depth, &self.intrinsics, &pose);
        let t2 = Instant::now();
        let mut record = FrameRecord {
            frame: idx,
            t_load: ms(t1 - t0),
            t_reconstruct: ms(t2 - t1),
            fused: geo.fused,
            skipped: geo.skipped,
            ..Default::default()
        };
        if let Some(labeller) = self.labeller {
            if self.frames_seen.is_multiple_of(self.label_every) {
                let input = LabelInput::whole(InputKind::Depth, &depth)
                    .with_reference(&frame.depth)
                    .with_truth(&frame.labels)
                    .with_stream(idx as u64);
                let dist = labeller.label(&input)?;
                let t3 = Instant::now();
                fuse_semantic_with(
                    &mut self.field,
                    &depth,
                    &dist,
                    &self.intrinsics,
                    &pose,
                    &self.decay,
                    &mut self.scratch,
                )?;
                let t4 = Instant::now();
                record.t_label = ms(t3 - t2);
                record.t_fuse = ms(t4 - t3);
                record.pixel_evals = depth.len() as u64;
            }
        }
        self.frames_seen += 1;
        Ok(record)
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// State saved every `cadence` frames.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub frames_seen: usize,
    pub coverage: f64,
    pub labels: Raster<ClassId>,
    pub field: HeightField,
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub field: HeightField,
    pub snapshots: Vec<Snapshot>,
    pub records: Vec<FrameRecord>,
}

/// Runs the view pipeline over `frames`, snapshotting every `cadence` frames
/// (and after the last frame if it does not fall on the cadence).
pub fn run_sequence<I>(
    field: HeightField,
    frames: I,
    intrinsics: &Intrinsics,
    noise: &NoiseModel,
    labeller: &dyn Labeller,
    decay: &DecayModel,
    cadence: usize,
) -> Result<SequenceOutput>
where
    I: IntoIterator<Item = Result<ViewFrame>>,
{
    if cadence == 0 {
        return Err(Error::InvalidParameter("cadence must be positive".into()));
    }
    let mut pipeline = ViewPipeline::new(field, Some(labeller), *decay, *noise, *intrinsics)?;
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    for frame in frames {
        records.push(pipeline.process(&frame?)?);
        let seen = pipeline.frames_seen();
        if seen % cadence == 0 {
            snapshots.push(snapshot(&pipeline.field, seen));
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidParameter("sequence has no frames".into()));
    }
    let seen = pipeline.frames_seen();
    if seen % cadence != 0 {
        snapshots.push(snapshot(&pipeline.field, seen));
    }
    Ok(SequenceOutput {
        field: pipeline.field,
        snapshots,
        records,
    })
}

fn snapshot(field: &HeightField, frames_seen: usize) -> Snapshot {
    Snapshot {
        frames_seen,
        coverage: field.coverage(),
        labels: field.argmax_labels(),
        field: field.clone(),
    }
}
