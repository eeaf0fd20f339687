//! Metrics and the view-versus-map comparison experiments.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DecayModel, DistanceMode, FrameRecord, ViewPipeline};
use crate::grid::{ClassId, HeightField};
use crate::labellers::{
    calibrate_base_accuracy, CorruptionLabeller, CorruptionParams, InputKind, LabelInput, Labeller,
};
use crate::mapseg::{label_snapshot, plan_tiles, MapContext, TilePlan};
use crate::raster::Raster;
use crate::render::{make_trajectory, render_view, Intrinsics, NoiseModel, TrajectorySpec, NO_LABEL};
use crate::rng::{mix_key, tag};
use crate::scene::{generate_scene, grid_over_extent, rasterize_ground_truth, GroundTruth, Scene, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    /// IoU per class; `NaN` for classes absent from both inputs.
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub present: Vec<bool>,
    pub num_evaluated: usize,
}

/// Mean IoU over classes present in the prediction or the ground truth.
/// Pixels whose ground truth equals `ignore` are skipped; a prediction equal
/// to `ignore` counts as no prediction.
pub fn mean_iou(pred: &Raster<ClassId>, gt: &Raster<ClassId>, ignore: ClassId) -> Result<IoUReport> {
    let mut acc = IoUAccumulator::default();
    acc.add(pred, gt, ignore)?;
    acc.report()
}

/// Pools intersections and unions over many images, the usual way a
/// segmentation test set is scored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IoUAccumulator {
    inter: Vec<usize>,
    pred: Vec<usize>,
    gt: Vec<usize>,
    evaluated: usize,
}

impl IoUAccumulator {
    pub fn add(&mut self, pred: &Raster<ClassId>, gt: &Raster<ClassId>, ignore: ClassId) -> Result<()> {
        pred.same_dims(gt)?;
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if g == ignore {
                continue;
            }
            let n = 1 + if p == ignore { g } else { p.max(g) } as usize;
            if self.gt.len() < n {
                self.inter.resize(n, 0);
                self.pred.resize(n, 0);
                self.gt.resize(n, 0);
            }
            self.evaluated += 1;
            self.gt[g as usize] += 1;
            if p == ignore {
                continue;
            }
            self.pred[p as usize] += 1;
            if p == g {
                self.inter[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> Result<IoUReport> {
        if self.evaluated == 0 {
            return Err(Error::InvalidParameter("no pixels to evaluate".into()));
        }
        let n = self.gt.len();
        let mut per_class = vec![f64::NAN; n];
        let mut present = vec![false; n];
        let mut sum = 0.0;
        let mut k = 0;
        for c in 0..n {
            let union = self.pred[c] + self.gt[c] - self.inter[c];
            if union > 0 {
                present[c] = true;
                per_class[c] = self.inter[c] as f64 / union as f64;
                sum += per_class[c];
                k += 1;
            }
        }
        Ok(IoUReport {
            per_class,
            mean: sum / k as f64,
            present,
            num_evaluated: self.evaluated,
        })
    }
}

/// Labeller work and wall-clock totals of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub t_load_ms: f64,
    pub t_reconstruct_ms: f64,
    pub t_view_label_ms: f64,
    pub t_fuse_ms: f64,
    pub t_map_label_ms: f64,
    /// Σ frames × pixels.
    pub view_pixel_evals: u64,
    /// Σ windows × window pixels for one pass over the final map.
    pub map_pixel_evals: u64,
    pub map_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub seed: u64,
    /// Object counts per class.
    pub counts: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Target single-frame mIoU of the view labeller.
    pub view_target: f64,
    /// Target single-pass mIoU of the map labeller on the ground-truth map.
    pub map_target: f64,
    pub frames_per_scene: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    /// Translation sigmas (m).
    pub sigma_pose: Vec<f64>,
    /// Depth sigmas (m).
    pub sigma_depth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub scenes: Vec<SceneEntry>,
    /// Run seeds per scene (trajectory, noise and labeller streams).
    pub seeds: Vec<u64>,
    pub extent: f64,
    /// Vertices per side of the square map.
    pub map_size: usize,
    pub frames: usize,
    pub cadence: usize,
    pub intrinsics: Intrinsics,
    pub trajectory: TrajectorySpec,
    pub alpha: f64,
    pub distance: DistanceMode,
    pub view_labeller: CorruptionParams,
    pub map_labeller: CorruptionParams,
    pub calibration: Option<Calibration>,
    /// Map labelling window `(w_x, w_y)`.
    pub window: (usize, usize),
    pub coverage_threshold: f64,
    pub sigma_pose: f64,
    pub sigma_depth: f64,
    /// Rotation sigma (rad) per metre of translation sigma.
    pub rot_per_trans: f64,
    pub noise_grid: NoiseGrid,
    /// Write measured wall-clock columns; these differ between runs.
    pub record_wallclock: bool,
    pub jobs: usize,
}

/// Confusion for the view labeller: object errors go to background and
/// background errors go to class 1.
pub fn view_confusion() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let view = CorruptionParams {
            num_classes: NUM_CLASSES,
            base_accuracy: 0.97,
            boundary_band: 1,
            boundary_boost: 0.1,
            confusion: view_confusion(),
            noise_sensitivity: 60.0,
            confidence: 0.7,
            seed: 0,
        };
        let map = CorruptionParams {
            num_classes: NUM_CLASSES,
            base_accuracy: 0.95,
            boundary_band: 1,
            boundary_boost: 0.05,
            confusion: crate::labellers::uniform_off_diagonal(NUM_CLASSES),
            noise_sensitivity: 5.0,
            confidence: 0.7,
            seed: 0,
        };
        Self {
            master_seed: 0,
            scenes: (1..=5)
                .map(|s| SceneEntry {
                    seed: s,
                    counts: [2, 2, 2],
                })
                .collect(),
            seeds: (0..10).collect(),
            extent: 1.024,
            map_size: 257,
            frames: 300,
            cadence: 20,
            intrinsics: Intrinsics::with_fov(96, 72, 60.0),
            trajectory: TrajectorySpec::default(),
            alpha: 1.0,
            distance: DistanceMode::Euclidean,
            view_labeller: view,
            map_labeller: map,
            calibration: Some(Calibration {
                view_target: 0.95,
                map_target: 0.93,
                frames_per_scene: 4,
            }),
            window: (96, 96),
            coverage_threshold: crate::mapseg::DEFAULT_COVERAGE_THRESHOLD,
            sigma_pose: 0.0,
            sigma_depth: 0.0,
            rot_per_trans: 1.0,
            noise_grid: NoiseGrid {
                sigma_pose: vec![0.0, 0.005, 0.01],
                sigma_depth: vec![0.0, 0.01, 0.02],
            },
            record_wallclock: false,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.scenes.is_empty() || self.seeds.is_empty() {
            return bad("config needs at least one scene and one seed");
        }
        if self.map_size < 2 || !(self.extent > 0.0) {
            return bad("map needs at least 2 vertices per side and positive extent");
        }
        if self.cadence == 0 {
            return bad("cadence must be positive");
        }
        if self.view_labeller.num_classes != NUM_CLASSES || self.map_labeller.num_classes != NUM_CLASSES {
            return bad("labellers must use the scene class count");
        }
        if !(self.sigma_pose >= 0.0 && self.sigma_depth >= 0.0 && self.rot_per_trans >= 0.0) {
            return bad("noise sigmas must be nonnegative");
        }
        self.view_labeller.validate()?;
        self.map_labeller.validate()?;
        self.intrinsics.validate()?;
        DecayModel::new(self.alpha, NUM_CLASSES)?;
        Ok(())
    }

    fn noise(&self, sigma_pose: f64, sigma_depth: f64, seed: u64) -> NoiseModel {
        NoiseModel {
            pose_sigma_trans: sigma_pose,
            pose_sigma_rot: sigma_pose * self.rot_per_trans,
            depth_sigma: sigma_depth,
            seed,
        }
    }
}

/// Scenes, ground truth and calibrated labeller parameters shared by all runs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub scenes: Vec<(Scene, GroundTruth)>,
    pub view_labeller: CorruptionParams,
    pub map_labeller: CorruptionParams,
    pub plan: TilePlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub view_base_accuracy: f64,
    pub map_base_accuracy: f64,
    /// mIoU pooled over the calibration frames.
    pub view_single_frame_miou: f64,
    /// mIoU pooled over the ground-truth maps.
    pub map_single_pass_miou: f64,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = grid_over_extent(config.extent, (config.map_size, config.map_size))?;
        let mut scenes = Vec::new();
        for entry in &config.scenes {
            let spec = generate_scene(config.extent, grid.resolution, entry.counts, entry.seed)?;
            let scene = Scene::new(spec);
            let gt = rasterize_ground_truth(&scene, &grid)?;
            scenes.push((scene, gt));
        }
        let r = config.map_labeller.boundary_band;
        let plan = plan_tiles((grid.width, grid.height), config.window, (r, r))?;
        let mut prepared = Self {
            config: config.clone(),
            scenes,
            view_labeller: config.view_labeller.clone(),
            map_labeller: config.map_labeller.clone(),
            plan,
        };
        if let Some(cal) = &config.calibration {
            prepared.calibrate(cal)?;
        }
        Ok(prepared)
    }

    fn calibrate(&mut self, cal: &Calibration) -> Result<()> {
        let cfg = &self.config;
        let mut frames = Vec::new();
        for (k, (scene, _)) in self.scenes.iter().enumerate() {
            let seed = mix_key(&[cfg.master_seed, 0xca11, k as u64]);
            let poses = make_trajectory(scene, cal.frames_per_scene.max(1), &cfg.trajectory, seed)?;
            for (i, pose) in poses.iter().enumerate() {
                frames.push(render_view(scene, pose, &cfg.intrinsics, i)?);
            }
        }
        let samples: Vec<LabelInput<'_>> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                LabelInput::whole(InputKind::Depth, &f.depth)
                    .with_reference(&f.depth)
                    .with_truth(&f.labels)
                    .with_stream(i as u64)
            })
            .collect();
        self.view_labeller.base_accuracy = calibrate_base_accuracy(&self.view_labeller, &samples, cal.view_target)?;
        let maps: Vec<LabelInput<'_>> = self
            .scenes
            .iter()
            .enumerate()
            .map(|(i, (_, gt))| {
                LabelInput::whole(InputKind::Height, &gt.heights)
                    .with_reference(&gt.heights)
                    .with_truth(&gt.labels)
                    .with_stream(i as u64)
            })
            .collect();
        self.map_labeller.base_accuracy = calibrate_base_accuracy(&self.map_labeller, &maps, cal.map_target)?;
        Ok(())
    }

    /// Single-input mIoU of the (calibrated) labellers on noise-free inputs.
    pub fn calibration_report(&self) -> Result<CalibrationReport> {
        let cfg = &self.config;
        let view = CorruptionLabeller::new(self.view_labeller.clone())?;
        let map = CorruptionLabeller::new(self.map_labeller.clone())?;
        let frames_per_scene = cfg.calibration.as_ref().map_or(4, |c| c.frames_per_scene.max(1));
        let mut vacc = IoUAccumulator::default();
        let mut macc = IoUAccumulator::default();
        let mut vn = 0;
        for (k, (scene, gt)) in self.scenes.iter().enumerate() {
            let seed = mix_key(&[cfg.master_seed, 0xca11, k as u64]);
            let poses = make_trajectory(scene, frames_per_scene, &cfg.trajectory, seed)?;
            for (i, pose) in poses.iter().enumerate() {
                let f = render_view(scene, pose, &cfg.intrinsics, i)?;
                let input = LabelInput::whole(InputKind::Depth, &f.depth)
                    .with_truth(&f.labels)
                    .with_stream(vn as u64);
                vacc.add(&view.label(&input)?.argmax(), &f.labels, NO_LABEL)?;
                vn += 1;
            }
            let input = LabelInput::whole(InputKind::Height, &gt.heights)
                .with_truth(&gt.labels)
                .with_stream(k as u64);
            macc.add(&map.label(&input)?.argmax(), &gt.labels, NO_LABEL)?;
        }
        Ok(CalibrationReport {
            view_base_accuracy: self.view_labeller.base_accuracy,
            map_base_accuracy: self.map_labeller.base_accuracy,
            view_single_frame_miou: vacc.report()?.mean,
            map_single_pass_miou: macc.report()?.mean,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub frames: usize,
    /// Cumulative processing time of the shared reconstruction and view labelling.
    pub wallclock_ms: f64,
    pub coverage: f64,
    /// `None` when the view pipeline did not run.
    pub view_miou: Option<f64>,
    /// `None` before the coverage threshold is reached.
    pub map_miou: Option<f64>,
    pub view_pixevals: u64,
    pub map_pixevals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scene: usize,
    pub seed: u64,
    pub sigma_pose: f64,
    pub sigma_depth: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub cost: CostReport,
}

impl RunResult {
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Which pipelines a run evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pipelines {
    pub view: bool,
    pub map: bool,
}

impl Pipelines {
    pub const BOTH: Self = Self { view: true, map: true };
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: RunResult,
    /// Final reconstruction (with view posteriors when the view pipeline ran).
    pub field: HeightField,
    pub records: Vec<FrameRecord>,
}

/// One run of both pipelines on a shared frame stream.
///
/// Both methods share the reconstructed geometry; the view method fuses
/// per-frame labels into it, the map method labels the geometry at each
/// checkpoint once coverage is reached.
pub fn run_single(
    prep: &Prepared,
    scene_idx: usize,
    seed: u64,
    sigma_pose: f64,
    sigma_depth: f64,
) -> Result<RunResult> {
    run_pipelines(prep, scene_idx, seed, sigma_pose, sigma_depth, Pipelines::BOTH).map(|o| o.result)
}

/// Labeller that a run of `prep` uses for the map pipeline.
pub fn map_labeller_for(prep: &Prepared, scene_idx: usize, seed: u64) -> Result<CorruptionLabeller> {
    let key = mix_key(&[prep.config.master_seed, scene_idx as u64, seed, tag::MAP_LABEL]);
    CorruptionLabeller::new(CorruptionParams {
        seed: key,
        ..prep.map_labeller.clone()
    })
}

pub fn run_pipelines(
    prep: &Prepared,
    scene_idx: usize,
    seed: u64,
    sigma_pose: f64,
    sigma_depth: f64,
    which: Pipelines,
) -> Result<RunOutput> {
    let cfg = &prep.config;
    let (scene, gt) = prep
        .scenes
        .get(scene_idx)
        .ok_or_else(|| Error::InvalidParameter(format!("no scene {scene_idx}")))?;
    let key = |t: u64| mix_key(&[cfg.master_seed, scene_idx as u64, seed, t]);
    let noise = cfg.noise(sigma_pose, sigma_depth, key(tag::POSE));
    let view = CorruptionLabeller::new(CorruptionParams {
        seed: key(tag::VIEW_LABEL),
        ..prep.view_labeller.clone()
    })?;
    let map = map_labeller_for(prep, scene_idx, seed)?;
    let mut decay = DecayModel::new(cfg.alpha, NUM_CLASSES)?;
    decay.distance = cfg.distance;
    let field = HeightField::from_spec(gt.grid, NUM_CLASSES)?;
    let labeller = which.view.then_some(&view as &dyn Labeller);
    let mut pipeline = ViewPipeline::new(field, labeller, decay, noise, cfg.intrinsics)?;

    let mut result = RunResult {
        scene: scene_idx,
        seed,
        sigma_pose,
        sigma_depth,
        checkpoints: Vec::new(),
        cost: CostReport::default(),
    };
    let mut records = Vec::new();
    if cfg.frames == 0 {
        return Ok(RunOutput {
            result,
            field: pipeline.field,
            records,
        });
    }
    let poses = make_trajectory(scene, cfg.frames, &cfg.trajectory, key(tag::TRAJECTORY))?;
    let mut elapsed = 0.0;
    let cost = &mut result.cost;
    for (i, pose) in poses.iter().enumerate() {
        let t0 = Instant::now();
        let frame = render_view(scene, pose, &cfg.intrinsics, i)?;
        let t_render = t0.elapsed().as_secs_f64() * 1e3;
        let mut rec = pipeline.process(&frame)?;
        rec.t_load += t_render;
        cost.t_load_ms += rec.t_load;
        cost.t_reconstruct_ms += rec.t_reconstruct;
        cost.t_view_label_ms += rec.t_label;
        cost.t_fuse_ms += rec.t_fuse;
        cost.view_pixel_evals += rec.pixel_evals;
        elapsed += rec.t_load + rec.t_reconstruct + rec.t_label + rec.t_fuse;
        records.push(rec);

        let seen = i + 1;
        if seen % cfg.cadence != 0 && seen != cfg.frames {
            continue;
        }
        let field = &pipeline.field;
        let coverage = field.coverage();
        let view_miou = if which.view {
            Some(mean_iou(&field.argmax_labels(), &gt.labels, NO_LABEL)?.mean)
        } else {
            None
        };
        let (map_miou, map_pixevals) = if which.map && coverage >= cfg.coverage_threshold {
            let t1 = Instant::now();
            let ctx = MapContext {
                truth: Some(&gt.labels),
                reference: Some(&gt.heights),
                stream: seen as u64,
            };
            let (labels, stats) = label_snapshot(field, &map, &prep.plan, &ctx, 1)?;
            cost.t_map_label_ms += t1.elapsed().as_secs_f64() * 1e3;
            cost.map_pixel_evals = stats.pixel_evals;
            cost.map_windows = stats.windows;
            (Some(mean_iou(&labels, &gt.labels, NO_LABEL)?.mean), stats.pixel_evals)
        } else {
            (None, 0)
        };
        result.checkpoints.push(Checkpoint {
            frames: seen,
            wallclock_ms: elapsed,
            coverage,
            view_miou,
            map_miou,
            view_pixevals: cost.view_pixel_evals,
            map_pixevals,
        });
    }
    Ok(RunOutput {
        result,
        field: pipeline.field,
        records,
    })
}

/// Runs `tasks` on up to `jobs` threads; results keep task order.
fn run_tasks<T: Sync, R: Send>(tasks: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, tasks.len().max(1));
    if jobs == 1 {
        return tasks.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let r = f(&tasks[i]);
                slots.lock().expect("result lock poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock poisoned")
        .into_iter()
        .map(|r| r.expect("task not run"))
        .collect()
}

/// Every `(scene, seed)` pair at the configured noise level.
pub fn run_comparison(prep: &Prepared) -> Result<Vec<RunResult>> {
    let cfg = &prep.config;
    let tasks: Vec<(usize, u64)> = (0..prep.scenes.len())
        .flat_map(|s| cfg.seeds.iter().map(move |&k| (s, k)))
        .collect();
    run_tasks(&tasks, cfg.jobs, |&(s, k)| {
        run_single(prep, s, k, cfg.sigma_pose, cfg.sigma_depth)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub sigma_pose: f64,
    pub sigma_depth: f64,
    pub view: Summary,
    pub map: Summary,
    pub runs: Vec<RunResult>,
}

/// Final-checkpoint mIoU of both pipelines over the noise grid. A map run
/// that never reaches coverage scores its last labelled state as 0.
pub fn run_noise_sweep(prep: &Prepared) -> Result<Vec<NoiseCell>> {
    let cfg = &prep.config;
    let grid = &cfg.noise_grid;
    if grid.sigma_pose.is_empty() || grid.sigma_depth.is_empty() {
        return Err(Error::InvalidParameter("noise grid must be nonempty".into()));
    }
    let mut tasks = Vec::new();
    for &sp in &grid.sigma_pose {
        for &sd in &grid.sigma_depth {
            for s in 0..prep.scenes.len() {
                for &k in &cfg.seeds {
                    tasks.push((sp, sd, s, k));
                }
            }
        }
    }
    let runs = run_tasks(&tasks, cfg.jobs, |&(sp, sd, s, k)| run_single(prep, s, k, sp, sd))?;
    let per_cell = prep.scenes.len() * cfg.seeds.len();
    let mut cells = Vec::new();
    for chunk in runs.chunks(per_cell) {
        let view: Vec<f64> = chunk
            .iter()
            .filter_map(|r| r.final_checkpoint())
            .map(|c| c.view_miou.unwrap_or(0.0))
            .collect();
        let map: Vec<f64> = chunk
            .iter()
            .filter_map(|r| r.final_checkpoint())
            .map(|c| c.map_miou.unwrap_or(0.0))
            .collect();
        cells.push(NoiseCell {
            sigma_pose: chunk[0].sigma_pose,
            sigma_depth: chunk[0].sigma_depth,
            view: Summary::of(&view),
            map: Summary::of(&map),
            runs: chunk.to_vec(),
        });
    }
    Ok(cells)
}

pub const COMPARISON_HEADER: &str = "scene,seed,frames,wallclock_ms,view_miou,map_miou,view_pixevals,map_pixevals";
pub const NOISE_HEADER: &str = "sigma_pose,sigma_depth,pipeline,miou_mean,miou_std,n_runs";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Per-checkpoint rows. `wallclock_ms` is left empty unless `wallclock` is set.
pub fn write_comparison_csv<W: Write>(mut out: W, runs: &[RunResult], wallclock: bool) -> Result<()> {
    writeln!(out, "{COMPARISON_HEADER}")?;
    for r in runs {
        for c in &r.checkpoints {
            let wc = if wallclock {
                format!("{:.3}", c.wallclock_ms)
            } else {
                String::new()
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scene,
                r.seed,
                c.frames,
                wc,
                opt(c.view_miou),
                opt(c.map_miou),
                c.view_pixevals,
                c.map_pixevals
            )?;
        }
    }
    Ok(())
}

/// Frame-indexed mean curves across runs.
pub fn write_mean_curve_csv<W: Write>(mut out: W, runs: &[RunResult]) -> Result<()> {
    writeln!(
        out,
        "frames,view_miou_mean,view_miou_std,map_miou_mean,map_miou_std,n_view,n_map"
    )?;
    let mut frames: Vec<usize> = runs
        .iter()
        .flat_map(|r| r.checkpoints.iter().map(|c| c.frames))
        .collect();
    frames.sort_unstable();
    frames.dedup();
    for f in frames {
        let cps: Vec<&Checkpoint> = runs
            .iter()
            .filter_map(|r| r.checkpoints.iter().find(|c| c.frames == f))
            .collect();
        let view = Summary::of(&cps.iter().filter_map(|c| c.view_miou).collect::<Vec<_>>());
        let map_vals: Vec<f64> = cps.iter().filter_map(|c| c.map_miou).collect();
        let map = Summary::of(&map_vals);
        let fmt = |s: Summary| {
            if s.n == 0 {
                (String::new(), String::new())
            } else {
                (format!("{:.6}", s.mean), format!("{:.6}", s.std))
            }
        };
        let (vm, vs) = fmt(view);
        let (mm, ms) = fmt(map);
        writeln!(out, "{f},{vm},{vs},{mm},{ms},{},{}", view.n, map.n)?;
    }
    Ok(())
}

pub fn write_cost_csv<W: Write>(mut out: W, runs: &[RunResult], wallclock: bool) -> Result<()> {
    write!(out, "scene,seed,view_pixevals,map_pixevals,map_windows")?;
    if wallclock {
        write!(
            out,
            ",t_load_ms,t_reconstruct_ms,t_view_label_ms,t_fuse_ms,t_map_label_ms"
        )?;
    }
    writeln!(out)?;
    for r in runs {
        let c = &r.cost;
        write!(
            out,
            "{},{},{},{},{}",
            r.scene, r.seed, c.view_pixel_evals, c.map_pixel_evals, c.map_windows
        )?;
        if wallclock {
            write!(
                out,
                ",{:.3},{:.3},{:.3},{:.3},{:.3}",
                c.t_load_ms, c.t_reconstruct_ms, c.t_view_label_ms, c.t_fuse_ms, c.t_map_label_ms
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_noise_csv<W: Write>(mut out: W, cells: &[NoiseCell]) -> Result<()> {
    writeln!(out, "{NOISE_HEADER}")?;
    for c in cells {
        for (name, s) in [("view", c.view), ("map", c.map)] {
            writeln!(
                out,
                "{},{},{name},{:.6},{:.6},{}",
                c.sigma_pose, c.sigma_depth, s.mean, s.std, s.n
            )?;
        }
    }
    Ok(())
}

/// Whitespace matrix for gnuplot `matrix nonuniform`: first row holds the
/// depth sigmas, first column the pose sigmas.
pub fn write_noise_matrix<W: Write>(mut out: W, cells: &[NoiseCell], view: bool) -> Result<()> {
    let mut pose: Vec<f64> = cells.iter().map(|c| c.sigma_pose).collect();
    let mut depth: Vec<f64> = cells.iter().map(|c| c.sigma_depth).collect();
    for v in [&mut pose, &mut depth] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    write!(out, "{}", depth.len())?;
    for d in &depth {
        write!(out, " {d}")?;
    }
    writeln!(out)?;
    for p in &pose {
        write!(out, "{p}")?;
        for d in &depth {
            let cell = cells.iter().find(|c| c.sigma_pose == *p && c.sigma_depth == *d);
            let v = cell.map_or(f64::NAN, |c| if view { c.view.mean } else { c.map.mean });
            write!(out, " {v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes comparison outputs under `dir`.
pub fn write_comparison_outputs(dir: &Path, prep: &Prepared, runs: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let wc = prep.config.record_wallclock;
    let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_comparison_csv(create("comparison.csv")?, runs, wc)?;
    write_mean_curve_csv(create("comparison_mean.csv")?, runs)?;
    write_cost_csv(create("cost.csv")?, runs, wc)?;
    let cal = prep.calibration_report()?;
    std::fs::write(dir.join("calibration.json"), serde_json::to_string_pretty(&cal)? + "\n")?;
    Ok(())
}

pub fn write_sweep_outputs(dir: &Path, cells: &[NoiseCell]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_noise_csv(create("noise.csv")?, cells)?;
    write_noise_matrix(create("noise_view.dat")?, cells, true)?;
    write_noise_matrix(create("noise_map.dat")?, cells, false)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_scores_one() {
        let gt = Raster::from_fn(7, 5, |r, c| ((r + c) % 3) as ClassId);
        let rep = mean_iou(&gt, &gt, NO_LABEL).unwrap();
        assert_eq!(rep.mean, 1.0);
        assert_eq!(rep.num_evaluated, 35);
    }

    #[test]
    fn half_coverage_counting() {
        let gt = Raster::from_fn(4, 4, |_, c| if c < 2 { 0 } else { 1 });
        let pred = Raster::from_fn(4, 4, |r, c| if r < 2 { *gt.get(r, c) } else { NO_LABEL });
        let rep = mean_iou(&pred, &gt, NO_LABEL).unwrap();
        assert_eq!(rep.per_class, vec![0.5, 0.5]);
        assert_eq!(rep.mean, 0.5);
        assert_eq!(rep.num_evaluated, 16);
    }

    #[test]
    fn all_background_prediction() {
        let gt = Raster::from_fn(10, 10, |r, _| if r < 3 { 2 } else { 0 });
        let pred = Raster::filled(10, 10, 0);
        let rep = mean_iou(&pred, &gt, NO_LABEL).unwrap();
        assert!(rep.per_class[0] < 1.0);
        assert_eq!(rep.per_class[2], 0.0);
        assert!(!rep.present[1]);
        assert!((rep.mean - 0.35).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_and_errors() {
        let gt = Raster::from_fn(3, 1, |_, c| [1, NO_LABEL, 0][c]);
        let pred = Raster::from_fn(3, 1, |_, c| [1, 0, 0][c]);
        assert_eq!(mean_iou(&pred, &gt, NO_LABEL).unwrap().mean, 1.0);
        assert!(mean_iou(&pred, &Raster::filled(2, 1, 0), NO_LABEL).is_err());
        assert!(mean_iou(&pred, &Raster::filled(3, 1, NO_LABEL), NO_LABEL).is_err());
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        assert!(Summary::of(&[]).mean.is_nan());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial = ExperimentConfig::from_json(r#"{"frames": 12, "map_size": 65}"#).unwrap();
        assert_eq!(partial.frames, 12);
        assert_eq!(partial.cadence, cfg.cadence);
        assert!(ExperimentConfig::from_json(r#"{"cadence": 0}"#).is_err());
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            scenes: vec![SceneEntry {
                seed: 3,
                counts: [1, 1, 1],
            }],
            seeds: vec![0, 1],
            map_size: 65,
            extent: 0.512,
            frames: 24,
            cadence: 8,
            intrinsics: Intrinsics::with_fov(32, 24, 60.0),
            window: (32, 32),
            calibration: None,
            coverage_threshold: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_frames_give_empty_curve() {
        let prep = Prepared::new(&ExperimentConfig {
            frames: 0,
            ..tiny_config()
        })
        .unwrap();
        let runs = run_comparison(&prep).unwrap();
        assert!(runs.iter().all(|r| r.checkpoints.is_empty()));
    }

    #[test]
    fn comparison_is_reproducible_and_parallel_invariant() {
        let prep = Prepared::new(&tiny_config()).unwrap();
        let a = run_comparison(&prep).unwrap();
        let prep_par = Prepared::new(&ExperimentConfig {
            jobs: 2,
            ..tiny_config()
        })
        .unwrap();
        let b = run_comparison(&prep_par).unwrap();
        let csv = |runs: &[RunResult]| {
            let mut v = Vec::new();
            write_comparison_csv(&mut v, runs, false).unwrap();
            String::from_utf8(v).unwrap()
        };
        assert_eq!(csv(&a), csv(&b));
        let text = csv(&a);
        assert!(text.starts_with(COMPARISON_HEADER));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let last = a[0].final_checkpoint().unwrap();
        assert_eq!(last.frames, 24);
        assert_eq!(last.view_pixevals, 24 * 32 * 24);
        assert_eq!(last.map_pixevals, prep.plan.pixel_evals());
    }

    #[test]
    fn noise_matrix_layout() {
        let cell = |p, d, v| NoiseCell {
            sigma_pose: p,
            sigma_depth: d,
            view: Summary {
                mean: v,
                std: 0.0,
                n: 1,
            },
            map: Summary {
                mean: 1.0 - v,
                std: 0.0,
                n: 1,
            },
            runs: vec![],
        };
        let cells = vec![
            cell(0.0, 0.0, 0.9),
            cell(0.0, 0.1, 0.5),
            cell(0.2, 0.0, 0.8),
            cell(0.2, 0.1, 0.1),
        ];
        let mut out = Vec::new();
        write_noise_matrix(&mut out, &cells, true).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "2 0 0.1\n0 0.900000 0.500000\n0.2 0.800000 0.100000\n");
        let mut out = Vec::new();
        write_noise_csv(&mut out, &cells[..1]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{NOISE_HEADER}\n0,0,view,0.900000,0.000000,1\n0,0,map,0.100000,0.000000,1\n")
        );
    }

    proptest! {
        #[test]
        fn relabelling_permutes_iou(
            data in proptest::collection::vec((0u8..4, 0u8..4), 1..200),
            perm in Just([0u8, 1, 2, 3]).prop_shuffle(),
        ) {
            let n = data.len();
            let pred = Raster::from_vec(n, 1, data.iter().map(|d| d.0).collect()).unwrap();
            let gt = Raster::from_vec(n, 1, data.iter().map(|d| d.1).collect()).unwrap();
            let a = mean_iou(&pred, &gt, NO_LABEL).unwrap();
            let b = mean_iou(&pred.map(|&c| perm[c as usize]), &gt.map(|&c| perm[c as usize]), NO_LABEL).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            for c in 0..a.per_class.len() {
                let pc = perm[c] as usize;
                if a.present[c] {
                    prop_assert_eq!(a.per_class[c], b.per_class[pc]);
                }
            }
            prop_assert!(a.per_class.iter().filter(|v| v.is_finite()).all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
