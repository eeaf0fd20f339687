//! Simulated pinhole depth camera over a [`Scene`].
//!
//! Camera frame: +z along the optical axis, +x to image right, +y to image
//! down. Depth images store the camera-frame z of the hit point (0 = invalid).

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassId, GridSpec};
use crate::raster::Raster;
use crate::rng::{self, stream_rng, tag};
use crate::scene::Scene;

/// Label value of pixels whose ray misses the scene.
pub const NO_LABEL: ClassId = u8::MAX;

const BISECTION_TOLERANCE: f64 = 1e-6;

/// World-from-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Camera at `position` looking straight down, image +x along world +x.
    pub fn nadir(position: Vector3<f64>) -> Self {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Self::new(Rotation3::from_matrix_unchecked(m), position)
    }

    /// Camera at `eye` looking at `target`. Image +x is perpendicular to both
    /// the optical axis and the horizontal direction `heading` (rad).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, heading: f64) -> Self {
        let forward = (target - eye).normalize();
        let h = Vector3::new(heading.cos(), heading.sin(), 0.0);
        let mut x = forward.cross(&h);
        if x.norm() < 1e-9 {
            x = forward.cross(&Vector3::new(-heading.sin(), heading.cos(), 0.0));
        }
        let x = x.normalize();
        let y = forward.cross(&x);
        let m = Matrix3::from_columns(&[x, y, forward]);
        Self::new(Rotation3::from_matrix_unchecked(m), eye)
    }

    /// Pose from a row-major rotation matrix and a translation. The matrix
    /// must be a proper rotation to within `1e-6`.
    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        let pose = Self::new(
            Rotation3::from_matrix_unchecked(Matrix3::from_row_slice(&rotation)),
            Vector3::from(translation),
        );
        let (err, det) = pose.orthonormality();
        if !(err < 1e-6 && (det - 1.0).abs() < 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "not a rotation matrix (orthonormality error {err:.2e}, det {det:.6})"
            )));
        }
        Ok(pose)
    }

    #[inline]
    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Max deviation of `R Rᵀ` from identity and the determinant of `R`.
    pub fn orthonormality(&self) -> (f64, f64) {
        let m = self.rotation.matrix();
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        (err, m.determinant())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Intrinsics {
    /// 320×240 with a 60° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 277.13,
            fy: 277.13,
            cx: 159.5,
            cy: 119.5,
            width: 320,
            height: 240,
        }
    }
}

impl Intrinsics {
    /// Square-pixel camera of the given size and horizontal field of view.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!("invalid intrinsics {self:?}")));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidParameter("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame ray through pixel `(row, col)` with unit z, so that
    /// `depth * ray` is the camera-frame point.
    #[inline]
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new((col as f64 - self.cx) / self.fx, (row as f64 - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point to continuous pixel coordinates `(col, row)`.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewFrame {
    pub depth: Raster<f64>,
    /// Ground-truth class per pixel, [`NO_LABEL`] where depth is invalid.
    pub labels: Raster<ClassId>,
    pub pose: CameraPose,
    pub index: usize,
}

impl ViewFrame {
    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Backprojects a pixel with known depth to world coordinates.
#[inline]
pub fn backproject(pose: &CameraPose, intr: &Intrinsics, row: usize, col: usize, depth: f64) -> Vector3<f64> {
    pose.to_world(&(intr.ray(row, col) * depth))
}

/// Parameter interval where `origin + t * dir` lies inside the scene box.
fn clip_to_box(origin: &Vector3<f64>, dir: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - origin[k]) / dir[k];
        let b = (hi[k] - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Coarse grid of surface height upper bounds, used to skip empty space.
struct BoundGrid {
    cell: f64,
    n: usize,
    max: Vec<f64>,
}

impl BoundGrid {
    fn new(scene: &Scene, cell: f64) -> Self {
        let n = (scene.extent() / cell).ceil().max(1.0) as usize;
        let mut max = vec![scene.background_bound(); n * n];
        for ((cx, cy), r, top) in scene.object_bounds() {
            let lo = |v: f64| (((v - r) / cell).floor().max(0.0) as usize).min(n - 1);
            let hi = |v: f64| (((v + r) / cell).floor().max(0.0) as usize).min(n - 1);
            for gy in lo(cy)..=hi(cy) {
                for gx in lo(cx)..=hi(cx) {
                    let m = &mut max[gy * n + gx];
                    *m = m.max(top);
                }
            }
        }
        Self { cell, n, max }
    }

    /// Cell index and its xy bounds for a point, or `None` outside the grid.
    #[inline]
    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, [f64; 2], [f64; 2])> {
        let gx = (x / self.cell).floor();
        let gy = (y / self.cell).floor();
        if gx < 0.0 || gy < 0.0 {
            return None;
        }
        let (gx, gy) = ((gx as usize).min(self.n - 1), (gy as usize).min(self.n - 1));
        let lo = [gx as f64 * self.cell, gy as f64 * self.cell];
        Some((gy * self.n + gx, lo, [lo[0] + self.cell, lo[1] + self.cell]))
    }

    /// Largest `t' >= t` such that the ray is certainly above the surface on `[t, t']`.
    #[inline]
    fn skip(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t: f64) -> f64 {
        let p = origin + dir * t;
        let Some((idx, lo, hi)) = self.cell_of(p.x, p.y) else {
            return t;
        };
        let bound = self.max[idx];
        if p.z <= bound || dir.z >= 0.0 {
            return t;
        }
        let mut t_exit = (bound - origin.z) / dir.z;
        for k in 0..2 {
            if dir[k] > 0.0 {
                t_exit = t_exit.min((hi[k] - origin[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                t_exit = t_exit.min((lo[k] - origin[k]) / dir[k]);
            }
        }
        t_exit.max(t)
    }
}

/// Casts one ray; returns the depth parameter and class at the first surface hit.
fn cast(
    scene: &Scene,
    bounds: &BoundGrid,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    step: f64,
) -> Option<(f64, ClassId)> {
    let (z_lo, z_hi) = scene.height_bounds();
    let e = scene.extent();
    let (t0, t1) = clip_to_box(origin, dir, [0.0, 0.0, z_lo - 1e-9], [e, e, z_hi + 1e-9])?;
    let len = dir.norm();
    let dt = step / len;
    let above = |t: f64| -> (bool, ClassId) {
        let p = origin + dir * t;
        let (h, l) = scene.sample_unchecked(p.x, p.y);
        (p.z > h, l)
    };
    let (is_above, label) = above(t0);
    if !is_above {
        return Some((t0, label));
    }
    let mut t_prev = t0;
    loop {
        // everything up to `safe` is known to be above the surface
        let safe = bounds.skip(origin, dir, t_prev).min(t1);
        if safe > t_prev {
            t_prev = safe;
            if t_prev >= t1 {
                return None;
            }
            continue;
        }
        let t = (t_prev + dt).min(t1);
        let (is_above, _) = above(t);
        if !is_above {
            let (mut lo, mut hi) = (t_prev, t);
            while (hi - lo) * len > BISECTION_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if above(mid).0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (_, label) = above(hi);
            return Some((hi, label));
        }
        if t >= t1 {
            return None;
        }
        t_prev = t;
    }
}

/// Renders depth and ground-truth labels by marching each pixel ray against
/// the continuous scene surface (step at most half the scene resolution,
/// then bisection to 1e-6 m).
pub fn render_view(scene: &Scene, pose: &CameraPose, intr: &Intrinsics, index: usize) -> Result<ViewFrame> {
    intr.validate()?;
    let eye = pose.translation;
    if scene.contains(eye.x, eye.y) {
        let surface = scene.height_at(eye.x, eye.y)?;
        if eye.z <= surface {
            return Err(Error::CameraBelowSurface {
                camera_z: eye.z,
                surface_z: surface,
            });
        }
    }
    let step = scene.spec().resolution / 2.0;
    let bounds = BoundGrid::new(scene, 8.0 * scene.spec().resolution);
    let mut depth = Raster::filled(intr.width, intr.height, 0.0);
    let mut labels = Raster::filled(intr.width, intr.height, NO_LABEL);
    for row in 0..intr.height {
        for col in 0..intr.width {
            let dir = pose.rotation * intr.ray(row, col);
            if let Some((t, label)) = cast(scene, &bounds, &eye, &dir, step) {
                depth.set(row, col, t);
                labels.set(row, col, label);
            }
        }
    }
    Ok(ViewFrame {
        depth,
        labels,
        pose: *pose,
        index,
    })
}

/// Gaussian pose and depth disturbances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis translation standard deviation (m).
    pub pose_sigma_trans: f64,
    /// Standard deviation of the rotation angle about a random axis (rad).
    pub pose_sigma_rot: f64,
    /// Per-pixel depth standard deviation (m).
    pub depth_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.pose_sigma_trans < 0.0 || self.pose_sigma_rot < 0.0 || self.depth_sigma < 0.0 {
            return Err(Error::InvalidParameter("noise sigmas must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.pose_sigma_trans == 0.0 && self.pose_sigma_rot == 0.0 && self.depth_sigma == 0.0
    }
}

/// Perturbed copy of a pose, reproducible from `(noise.seed, frame_index)`.
///
/// The rotation is right-multiplied by an axis-angle rotation with a
/// uniformly random axis and a normally distributed angle.
pub fn perturb_pose(pose: &CameraPose, noise: &NoiseModel, frame_index: usize) -> CameraPose {
    if noise.pose_sigma_trans == 0.0 && noise.pose_sigma_rot == 0.0 {
        return *pose;
    }
    let mut rng = stream_rng(noise.seed, tag::POSE, frame_index as u64);
    let mut gauss = || -> f64 { rng.sample(StandardNormal) };
    let dt = Vector3::new(gauss(), gauss(), gauss()) * noise.pose_sigma_trans;
    let mut axis = Vector3::new(gauss(), gauss(), gauss());
    if axis.norm() < 1e-12 {
        axis = Vector3::z();
    }
    let angle = gauss() * noise.pose_sigma_rot;
    let delta = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
    CameraPose::new(pose.rotation * delta, pose.translation + dt)
}

/// Adds i.i.d. Gaussian noise to valid depth pixels. Pixels whose noisy depth
/// would be nonpositive become invalid.
pub fn perturb_depth(depth: &Raster<f64>, noise: &NoiseModel, frame_index: usize) -> Raster<f64> {
    if noise.depth_sigma == 0.0 {
        return depth.clone();
    }
    let key = rng::mix_key(&[tag::DEPTH, frame_index as u64]);
    let mut out = depth.clone();
    for (i, d) in out.as_mut_slice().iter_mut().enumerate() {
        if *d <= 0.0 {
            continue;
        }
        let n: f64 = stream_rng(noise.seed, key, i as u64).sample(StandardNormal);
        let v = *d + n * noise.depth_sigma;
        *d = if v > 0.0 { v } else { 0.0 };
    }
    out
}

/// Ranges for browsing trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Camera height above the table plane (m).
    pub height_range: (f64, f64),
    /// Optical-axis angle from nadir (deg).
    pub tilt_range_deg: (f64, f64),
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            height_range: (0.18, 0.4),
            tilt_range_deg: (0.0, 40.0),
        }
    }
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Random browsing poses. Each frame aims its optical axis at a point drawn
/// uniformly over the scene, so footprints cover the scene stochastically.
pub fn make_trajectory(scene: &Scene, num_frames: usize, spec: &TrajectorySpec, seed: u64) -> Result<Vec<CameraPose>> {
    if num_frames == 0 {
        return Err(Error::InvalidParameter("trajectory needs at least one frame".into()));
    }
    let (h0, h1) = spec.height_range;
    let (a0, a1) = spec.tilt_range_deg;
    if !(h0 > 0.0 && h1 >= h0 && a0 >= 0.0 && a1 >= a0 && a1 < 90.0) {
        return Err(Error::InvalidParameter(format!("invalid trajectory ranges {spec:?}")));
    }
    let e = scene.extent();
    let (_, z_top) = scene.height_bounds();
    if h0 <= z_top {
        return Err(Error::InvalidParameter(
            "camera height range reaches into the scene".into(),
        ));
    }
    let mut rng = stream_rng(seed, tag::TRAJECTORY, 0);
    let poses = (0..num_frames)
        .map(|_| {
            let h = draw(&mut rng, spec.height_range);
            let tilt = draw(&mut rng, spec.tilt_range_deg).to_radians();
            let azimuth = rng.random_range(0.0..TAU);
            let heading = rng.random_range(0.0..TAU);
            let tx = rng.random_range(0.0..e);
            let ty = rng.random_range(0.0..e);
            let r = h * tilt.tan();
            let eye = Vector3::new(tx - r * azimuth.cos(), ty - r * azimuth.sin(), h);
            CameraPose::look_at(eye, Vector3::new(tx, ty, 0.0), heading)
        })
        .collect();
    Ok(poses)
}

/// Number of frames whose image contains each grid vertex, with the vertex
/// placed on the table plane and occlusion ignored.
pub fn footprint_counts(poses: &[CameraPose], intr: &Intrinsics, grid: &GridSpec) -> Raster<u32> {
    let mut counts = Raster::filled(grid.width, grid.height, 0u32);
    for pose in poses {
        let inv = pose.rotation.inverse();
        for r in 0..grid.height {
            for c in 0..grid.width {
                let p = Vector3::new(
                    grid.origin.0 + c as f64 * grid.resolution,
                    grid.origin.1 + r as f64 * grid.resolution,
                    0.0,
                );
                let pc = inv * (p - pose.translation);
                if let Some((u, v)) = intr.project(&pc) {
                    if u >= -0.5 && v >= -0.5 && u < intr.width as f64 - 0.5 && v < intr.height as f64 - 0.5 {
                        *counts.get_mut(r, c) += 1;
                    }
                }
            }
        }
    }
    counts
}

/// Depth as 16-bit big-endian PGM in millimetres (0 = invalid, saturating at 65535).
pub fn write_depth_pgm<W: Write>(mut out: W, depth: &Raster<f64>) -> Result<()> {
    write!(out, "P5\n# depth mm\n{} {}\n65535\n", depth.width(), depth.height())?;
    let mut buf = Vec::with_capacity(depth.len() * 2);
    for &d in depth.iter() {
        let q = if d > 0.0 {
            (d * 1000.0).round().min(65535.0) as u16
        } else {
            0
        };
        buf.extend_from_slice(&q.to_be_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Labels as 8-bit PGM; invalid pixels are 255.
pub fn write_label_pgm<W: Write>(mut out: W, labels: &Raster<ClassId>) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", labels.width(), labels.height())?;
    out.write_all(labels.as_slice())?;
    Ok(())
}

/// CSV `frame,tx,ty,tz,qw,qx,qy,qz`.
pub fn write_trajectory_csv<W: Write>(mut out: W, poses: &[CameraPose]) -> Result<()> {
    writeln!(out, "frame,tx,ty,tz,qw,qx,qy,qz")?;
    for (i, p) in poses.iter().enumerate() {
        let q = p.quaternion();
        let t = p.translation;
        writeln!(out, "{i},{},{},{},{},{},{},{}", t.x, t.y, t.z, q.w, q.i, q.j, q.k)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Footprint, ObjectSpec, SceneSpec, SCENE_VERSION};

    fn flat_scene(objects: Vec<ObjectSpec>, roughness: f64) -> Scene {
        Scene::new(SceneSpec {
            version: SCENE_VERSION,
            extent: 0.5,
            resolution: 0.004,
            seed: 3,
            background_roughness: roughness,
            objects,
        })
    }

    fn small_intrinsics() -> Intrinsics {
        Intrinsics::with_fov(41, 31, 60.0)
    }

    #[test]
    fn default_intrinsics_have_60_degree_fov() {
        let i = Intrinsics::default();
        let fov = 2.0 * (160.0 / i.fx).atan();
        assert!((fov.to_degrees() - 60.0).abs() < 1e-3);
        let j = Intrinsics::with_fov(320, 240, 60.0);
        assert!((j.fx - i.fx).abs() < 1e-2);
    }

    #[test]
    fn nadir_center_depth_flat() {
        let scene = flat_scene(vec![], 0.001);
        let pose = CameraPose::nadir(Vector3::new(0.25, 0.25, 0.3));
        let f = render_view(&scene, &pose, &small_intrinsics(), 0).unwrap();
        let bg = scene.background_height(0.25, 0.25);
        assert!((f.depth.get(15, 20) - (0.3 - bg)).abs() < 1e-5);
        assert_eq!(*f.labels.get(15, 20), 0);
    }

    #[test]
    fn box_reduces_center_depth() {
        let boxed = ObjectSpec {
            class_id: 2,
            footprint: Footprint::Slab {
                length: 0.1,
                width: 0.1,
            },
            position: (0.25, 0.25),
            orientation: 0.0,
            base_height: 0.02,
            relief: 0.0,
            relief_period: 0.0,
        };
        let flat = flat_scene(vec![], 0.0);
        let with_box = flat_scene(vec![boxed], 0.0);
        let pose = CameraPose::nadir(Vector3::new(0.25, 0.25, 0.3));
        let a = render_view(&flat, &pose, &small_intrinsics(), 0).unwrap();
        let b = render_view(&with_box, &pose, &small_intrinsics(), 0).unwrap();
        assert!((a.depth.get(15, 20) - b.depth.get(15, 20) - 0.02).abs() < 1e-5);
        assert_eq!(*b.labels.get(15, 20), 2);
    }

    #[test]
    fn rays_outside_extent_are_invalid() {
        let scene = flat_scene(vec![], 0.001);
        let pose = CameraPose::nadir(Vector3::new(3.0, 3.0, 0.3));
        let f = render_view(&scene, &pose, &small_intrinsics(), 0).unwrap();
        assert_eq!(f.valid_pixels(), 0);
        assert!(f.labels.iter().all(|&l| l == NO_LABEL));
    }

    #[test]
    fn camera_below_surface_is_error() {
        let scene = flat_scene(vec![], 0.001);
        let pose = CameraPose::nadir(Vector3::new(0.25, 0.25, -0.01));
        assert!(matches!(
            render_view(&scene, &pose, &small_intrinsics(), 0),
            Err(Error::CameraBelowSurface { .. })
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let pose = CameraPose::look_at(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.2, 0.25, 0.0), 1.0);
        let noise = NoiseModel {
            seed: 5,
            ..Default::default()
        };
        assert_eq!(perturb_pose(&pose, &noise, 3), pose);
        let depth = Raster::from_fn(5, 4, |r, c| (r + c) as f64 * 0.1);
        assert_eq!(perturb_depth(&depth, &noise, 3), depth);
    }

    #[test]
    fn perturbation_is_deterministic_and_frame_keyed() {
        let pose = CameraPose::nadir(Vector3::new(0.1, 0.2, 0.3));
        let noise = NoiseModel {
            pose_sigma_trans: 0.01,
            pose_sigma_rot: 0.02,
            depth_sigma: 0.005,
            seed: 11,
        };
        assert_eq!(perturb_pose(&pose, &noise, 4), perturb_pose(&pose, &noise, 4));
        assert_ne!(perturb_pose(&pose, &noise, 4), perturb_pose(&pose, &noise, 5));
        let p = perturb_pose(&pose, &noise, 4);
        let (err, det) = p.orthonormality();
        assert!(err < 1e-9 && (det - 1.0).abs() < 1e-9);
        let depth = Raster::filled(8, 8, 0.3);
        assert_eq!(perturb_depth(&depth, &noise, 2), perturb_depth(&depth, &noise, 2));
        assert_ne!(perturb_depth(&depth, &noise, 2), perturb_depth(&depth, &noise, 3));
    }

    #[test]
    fn invalid_depth_untouched_by_noise() {
        let mut depth = Raster::filled(4, 4, 0.3);
        depth.set(1, 1, 0.0);
        let noise = NoiseModel {
            depth_sigma: 0.01,
            seed: 1,
            ..Default::default()
        };
        assert_eq!(*perturb_depth(&depth, &noise, 0).get(1, 1), 0.0);
    }

    #[test]
    fn trajectory_ranges() {
        let scene = flat_scene(vec![], 0.001);
        let poses = make_trajectory(&scene, 1, &TrajectorySpec::default(), 9).unwrap();
        assert_eq!(poses.len(), 1);
        let z = poses[0].translation.z;
        assert!((0.18..0.4).contains(&z));

        let fixed = TrajectorySpec {
            height_range: (0.3, 0.3),
            tilt_range_deg: (0.0, 0.0),
        };
        for p in make_trajectory(&scene, 50, &fixed, 2).unwrap() {
            assert_eq!(p.translation.z, 0.3);
            let axis = p.rotation * Vector3::z();
            assert!((axis.z + 1.0).abs() < 1e-12);
            let (err, det) = p.orthonormality();
            assert!(err < 1e-9 && (det - 1.0).abs() < 1e-9);
        }

        for p in make_trajectory(&scene, 200, &TrajectorySpec::default(), 4).unwrap() {
            let axis = p.rotation * Vector3::z();
            let tilt = (-axis.z).acos().to_degrees();
            assert!(tilt <= 40.0 + 1e-9);
            assert!((0.18..=0.4).contains(&p.translation.z));
        }
    }

    #[test]
    fn trajectory_csv_header() {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[CameraPose::nadir(Vector3::new(1.0, 2.0, 3.0))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("frame,tx,ty,tz,qw,qx,qy,qz"));
        assert!(lines.next().unwrap().starts_with("0,1,2,3,"));
    }

    #[test]
    fn depth_pgm_is_millimetres() {
        let mut d = Raster::filled(2, 1, 0.0);
        d.set(0, 1, 0.2346);
        let mut buf = Vec::new();
        write_depth_pgm(&mut buf, &d).unwrap();
        let body = &buf[buf.len() - 4..];
        assert_eq!(body, &[0, 0, 0, 235]);
    }
}
