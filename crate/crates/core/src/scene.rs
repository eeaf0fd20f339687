//! Procedural table-top scenes: a gently undulating surface with
//! non-overlapping parametric objects of three classes.
//!
//! Object families (class ids):
//! 1. wide thin slab with periodic top relief,
//! 2. small elongated stadium-shaped slab with a crowned top,
//! 3. cross-shaped extrusion (body plus perpendicular wing).
//!
//! Heights are strictly single-valued. Footprints are half-open in object
//! coordinates: a rectangle covers `[-l/2, l/2) x [-w/2, w/2)`, so points on
//! the minimum edges belong to the object and points on the maximum edges do
//! not.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassId, GridSpec, BACKGROUND};
use crate::raster::Raster;
use crate::rng::mix_key;

pub const SCENE_VERSION: u32 = 1;
pub const NUM_OBJECT_CLASSES: usize = 3;
/// Background plus the three object classes.
pub const NUM_CLASSES: usize = NUM_OBJECT_CLASSES + 1;

pub const DEFAULT_ROUGHNESS: f64 = 0.001;
const MAX_REJECTIONS: usize = 2000;
/// Clearance kept between bounding circles of neighbouring objects.
const MIN_GAP: f64 = 0.01;
/// Densest packing fraction of equal disks in the plane.
pub const DISK_PACKING_DENSITY: f64 = 0.906_899_682_117_108_9;

/// Wavelengths (m) and amplitude shares of the background undulation.
const BACKGROUND_WAVES: [(f64, f64, f64, f64); 3] = [
    // (kx, ky, wavelength, share)
    (1.0, 0.0, 0.41, 0.5),
    (0.0, 1.0, 0.29, 0.3),
    (
        std::f64::consts::FRAC_1_SQRT_2,
        std::f64::consts::FRAC_1_SQRT_2,
        0.53,
        0.2,
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Footprint {
    /// Rectangle `length` along the object u axis, `width` along v.
    Slab { length: f64, width: f64 },
    /// Rectangle with semicircular ends; `length` is tip to tip.
    Stadium { length: f64, width: f64 },
    /// Body rectangle along u plus a wing rectangle along v centred at `wing_offset`.
    Cross {
        body_length: f64,
        body_width: f64,
        span: f64,
        chord: f64,
        wing_offset: f64,
    },
}

impl Footprint {
    pub fn area(&self) -> f64 {
        match *self {
            Footprint::Slab { length, width } => length * width,
            Footprint::Stadium { length, width } => (length - width) * width + PI * width * width / 4.0,
            Footprint::Cross {
                body_length,
                body_width,
                span,
                chord,
                ..
            } => body_length * body_width + span * chord - body_width * chord,
        }
    }

    /// Radius of a circle about the object origin containing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Footprint::Slab { length, width } | Footprint::Stadium { length, width } => {
                (length * length + width * width).sqrt() / 2.0
            }
            Footprint::Cross {
                body_length,
                body_width,
                span,
                chord,
                wing_offset,
            } => {
                let body = (body_length * body_length + body_width * body_width).sqrt() / 2.0;
                let wu = wing_offset.abs() + chord / 2.0;
                let wing = (wu * wu + span * span / 4.0).sqrt();
                body.max(wing)
            }
        }
    }

    #[inline]
    fn contains(&self, u: f64, v: f64) -> bool {
        #[inline]
        fn rect(u: f64, v: f64, l: f64, w: f64) -> bool {
            u >= -l / 2.0 && u < l / 2.0 && v >= -w / 2.0 && v < w / 2.0
        }
        match *self {
            Footprint::Slab { length, width } => rect(u, v, length, width),
            Footprint::Stadium { length, width } => {
                let half_straight = (length - width) / 2.0;
                if rect(u, v, 2.0 * half_straight, width) {
                    return true;
                }
                let du = u.abs() - half_straight;
                let r = width / 2.0;
                du > 0.0 && du * du + v * v < r * r
            }
            Footprint::Cross {
                body_length,
                body_width,
                span,
                chord,
                wing_offset,
            } => rect(u, v, body_length, body_width) || rect(u - wing_offset, v, chord, span),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: ClassId,
    pub footprint: Footprint,
    /// World `(x, y)` of the object origin (m).
    pub position: (f64, f64),
    /// Rotation of the object u axis from world +x (rad).
    pub orientation: f64,
    /// Top height above the table plane (m).
    pub base_height: f64,
    /// Top relief amplitude (m); its meaning depends on the family.
    pub relief: f64,
    /// Relief period (m), used by the slab family.
    #[serde(default)]
    pub relief_period: f64,
}

impl ObjectSpec {
    /// Highest point of the object top.
    pub fn max_height(&self) -> f64 {
        self.base_height + self.relief.max(0.0)
    }

    /// Top height at local coordinates; assumes `(u, v)` is inside the footprint.
    #[inline]
    fn top(&self, u: f64, v: f64) -> f64 {
        match self.footprint {
            Footprint::Slab { length, width } if self.relief_period > 0.0 => {
                let p = TAU / self.relief_period;
                let bu = 0.5 * (1.0 - ((u + length / 2.0) * p).cos());
                let bv = 0.5 * (1.0 - ((v + width / 2.0) * p).cos());
                self.base_height + self.relief * bu * bv
            }
            Footprint::Stadium { width, .. } => {
                let t = (2.0 * v / width).clamp(-1.0, 1.0);
                self.base_height + self.relief * (1.0 - t * t)
            }
            _ => self.base_height,
        }
    }
}

/// Serialized scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub version: u32,
    /// Side of the square scene (m); the scene spans `[0, extent]^2`.
    pub extent: f64,
    /// Nominal map resolution (m).
    pub resolution: f64,
    pub seed: u64,
    pub background_roughness: f64,
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(s)?;
        if spec.version != SCENE_VERSION {
            return Err(Error::Parse(format!("unsupported scene version {}", spec.version)));
        }
        Ok(spec)
    }

    /// Grid whose vertices span the scene at the nominal resolution.
    pub fn default_grid(&self) -> GridSpec {
        let n = (self.extent / self.resolution).round() as usize + 1;
        GridSpec {
            width: n,
            height: n,
            resolution: self.resolution,
            origin: (0.0, 0.0),
        }
    }
}

/// Parameter ranges of one object family.
#[derive(Clone, Copy, Debug)]
struct Family {
    length: (f64, f64),
    width: (f64, f64),
    base: (f64, f64),
    relief: f64,
}

const FAMILIES: [Family; NUM_OBJECT_CLASSES] = [
    Family {
        length: (0.16, 0.22),
        width: (0.055, 0.075),
        base: (0.010, 0.014),
        relief: 0.002,
    },
    Family {
        length: (0.10, 0.14),
        width: (0.030, 0.040),
        base: (0.018, 0.022),
        relief: 0.003,
    },
    Family {
        length: (0.13, 0.17),
        width: (0.018, 0.024),
        base: (0.028, 0.034),
        relief: 0.0,
    },
];
const SLAB_RELIEF_PERIOD: f64 = 0.018;
const WING_SPAN: (f64, f64) = (0.11, 0.15);
const WING_CHORD: (f64, f64) = (0.028, 0.036);
const WING_OFFSET: (f64, f64) = (0.0, 0.02);

/// Smallest bounding radius any object of `class_id` can have.
pub fn min_bounding_radius(class_id: ClassId) -> f64 {
    let f = FAMILIES[class_id as usize - 1];
    match class_id {
        3 => {
            let body = Footprint::Cross {
                body_length: f.length.0,
                body_width: f.width.0,
                span: WING_SPAN.0,
                chord: WING_CHORD.0,
                wing_offset: WING_OFFSET.0,
            };
            body.bounding_radius()
        }
        _ => Footprint::Slab {
            length: f.length.0,
            width: f.width.0,
        }
        .bounding_radius(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn sample_object(rng: &mut ChaCha8Rng, class_id: ClassId) -> ObjectSpec {
    let f = FAMILIES[class_id as usize - 1];
    let length = uniform(rng, f.length);
    let width = uniform(rng, f.width);
    let base_height = uniform(rng, f.base);
    let (footprint, relief_period) = match class_id {
        1 => (Footprint::Slab { length, width }, SLAB_RELIEF_PERIOD),
        2 => (Footprint::Stadium { length, width }, 0.0),
        _ => (
            Footprint::Cross {
                body_length: length,
                body_width: width,
                span: uniform(rng, WING_SPAN),
                chord: uniform(rng, WING_CHORD),
                wing_offset: uniform(rng, WING_OFFSET),
            },
            0.0,
        ),
    };
    ObjectSpec {
        class_id,
        footprint,
        position: (0.0, 0.0),
        orientation: 0.0,
        base_height,
        relief: f.relief,
        relief_period,
    }
}

/// Samples a scene with `counts[k]` objects of class `k + 1`.
///
/// Positions and orientations are uniform; overlapping placements (bounding
/// circles closer than a small gap) are rejected and redrawn.
pub fn generate_scene(
    extent: f64,
    resolution: f64,
    counts: [usize; NUM_OBJECT_CLASSES],
    seed: u64,
) -> Result<SceneSpec> {
    generate_scene_with(extent, resolution, counts, seed, DEFAULT_ROUGHNESS)
}

pub fn generate_scene_with(
    extent: f64,
    resolution: f64,
    counts: [usize; NUM_OBJECT_CLASSES],
    seed: u64,
    background_roughness: f64,
) -> Result<SceneSpec> {
    if !(extent > 0.0 && resolution > 0.0 && resolution < extent) {
        return Err(Error::InvalidDimensions(format!(
            "extent {extent} and resolution {resolution} are inconsistent"
        )));
    }
    if background_roughness < 0.0 {
        return Err(Error::InvalidParameter("negative background roughness".into()));
    }

    let mut disk_area = 0.0;
    for (k, &n) in counts.iter().enumerate() {
        let r = min_bounding_radius(k as ClassId + 1);
        if n > 0 && 2.0 * r > extent {
            return Err(Error::DensityTooHigh(format!(
                "class {} objects do not fit in a {extent} m scene",
                k + 1
            )));
        }
        disk_area += n as f64 * PI * r * r;
    }
    if disk_area > DISK_PACKING_DENSITY * extent * extent {
        return Err(Error::DensityTooHigh(format!(
            "object bounding disks need {disk_area:.4} m^2, only {:.4} m^2 is packable",
            DISK_PACKING_DENSITY * extent * extent
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(ObjectSpec, f64)> = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let mut object = sample_object(&mut rng, k as ClassId + 1);
            let radius = object.footprint.bounding_radius();
            let mut attempts = 0;
            loop {
                if attempts == MAX_REJECTIONS {
                    return Err(Error::DensityTooHigh(format!(
                        "could not place object {} of class {} after {MAX_REJECTIONS} attempts",
                        placed.len() + 1,
                        k + 1
                    )));
                }
                attempts += 1;
                let x = rng.random_range(radius..extent - radius);
                let y = rng.random_range(radius..extent - radius);
                let theta = rng.random_range(0.0..TAU);
                let clear = placed.iter().all(|(o, r)| {
                    let dx = o.position.0 - x;
                    let dy = o.position.1 - y;
                    (dx * dx + dy * dy).sqrt() >= r + radius + MIN_GAP
                });
                if clear {
                    object.position = (x, y);
                    object.orientation = theta;
                    break;
                }
            }
            placed.push((object, radius));
        }
    }

    Ok(SceneSpec {
        version: SCENE_VERSION,
        extent,
        resolution,
        seed,
        background_roughness,
        objects: placed.into_iter().map(|(o, _)| o).collect(),
    })
}

#[derive(Clone, Debug)]
struct PlacedObject {
    spec: ObjectSpec,
    cos: f64,
    sin: f64,
    radius_sq: f64,
}

/// Scene prepared for repeated height and label queries.
#[derive(Clone, Debug)]
pub struct Scene {
    spec: SceneSpec,
    objects: Vec<PlacedObject>,
    /// `(kx, ky, angular wavenumber, amplitude, phase)` per background wave.
    waves: Vec<(f64, f64, f64, f64, f64)>,
    z_min: f64,
    z_max: f64,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[spec.seed, 0x6267]));
        let waves = BACKGROUND_WAVES
            .iter()
            .map(|&(kx, ky, wavelength, share)| {
                (
                    kx,
                    ky,
                    TAU / wavelength,
                    share * spec.background_roughness,
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let objects: Vec<PlacedObject> = spec
            .objects
            .iter()
            .map(|o| {
                let r = o.footprint.bounding_radius();
                PlacedObject {
                    spec: o.clone(),
                    cos: o.orientation.cos(),
                    sin: o.orientation.sin(),
                    radius_sq: r * r,
                }
            })
            .collect();
        let top = objects
            .iter()
            .map(|o| o.spec.max_height())
            .fold(spec.background_roughness, f64::max);
        Self {
            z_min: -spec.background_roughness,
            z_max: top,
            objects,
            waves,
            spec,
        }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// `(centre, bounding radius, top height)` of every object.
    pub fn object_bounds(&self) -> impl Iterator<Item = ((f64, f64), f64, f64)> + '_ {
        self.objects
            .iter()
            .map(|o| (o.spec.position, o.radius_sq.sqrt(), o.spec.max_height()))
    }

    /// Largest background height anywhere.
    pub fn background_bound(&self) -> f64 {
        self.spec.background_roughness
    }

    pub fn extent(&self) -> f64 {
        self.spec.extent
    }

    /// Lower and upper bounds on the surface height anywhere in the scene.
    pub fn height_bounds(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let slack = 1e-9 * self.spec.extent;
        x >= -slack && y >= -slack && x <= self.spec.extent + slack && y <= self.spec.extent + slack
    }

    #[inline]
    pub fn background_height(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(kx, ky, k, amp, phase)| amp * (k * (kx * x + ky * y) + phase).sin())
            .sum()
    }

    /// Height and class of the surface at `(x, y)`; no bounds check.
    #[inline]
    pub fn sample_unchecked(&self, x: f64, y: f64) -> (f64, ClassId) {
        let background = self.background_height(x, y);
        for o in &self.objects {
            let dx = x - o.spec.position.0;
            let dy = y - o.spec.position.1;
            if dx * dx + dy * dy >= o.radius_sq {
                continue;
            }
            let u = o.cos * dx + o.sin * dy;
            let v = -o.sin * dx + o.cos * dy;
            if o.spec.footprint.contains(u, v) {
                return (o.spec.top(u, v).max(background), o.spec.class_id);
            }
        }
        (background, BACKGROUND)
    }

    pub fn sample(&self, x: f64, y: f64) -> Result<(f64, ClassId)> {
        if !self.contains(x, y) {
            return Err(Error::OutOfBounds { x, y });
        }
        Ok(self.sample_unchecked(x, y))
    }

    /// Exact surface height at `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64> {
        self.sample(x, y).map(|(h, _)| h)
    }

    pub fn label_at(&self, x: f64, y: f64) -> Result<ClassId> {
        self.sample(x, y).map(|(_, l)| l)
    }
}

/// Ground-truth height and label fields sampled on grid vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub grid: GridSpec,
    pub heights: Raster<f64>,
    pub labels: Raster<ClassId>,
}

/// Samples the scene at every vertex of `grid`.
pub fn rasterize_ground_truth(scene: &Scene, grid: &GridSpec) -> Result<GroundTruth> {
    if grid.width < 2 || grid.height < 2 {
        return Err(Error::InvalidDimensions("ground truth grid needs 2x2 vertices".into()));
    }
    let mut heights = Raster::filled(grid.width, grid.height, 0.0);
    let mut labels = Raster::filled(grid.width, grid.height, BACKGROUND);
    for r in 0..grid.height {
        for c in 0..grid.width {
            let x = grid.origin.0 + c as f64 * grid.resolution;
            let y = grid.origin.1 + r as f64 * grid.resolution;
            let (h, l) = scene.sample(x, y)?;
            heights.set(r, c, h);
            labels.set(r, c, l);
        }
    }
    Ok(GroundTruth {
        grid: *grid,
        heights,
        labels,
    })
}

/// Grid of `dims` vertices stretched over the full scene extent.
pub fn grid_over_extent(extent: f64, dims: (usize, usize)) -> Result<GridSpec> {
    if dims.0 < 2 || dims.1 < 2 || dims.0 != dims.1 {
        return Err(Error::InvalidDimensions(format!(
            "ground truth grid must be square with at least 2 vertices per side, got {dims:?}"
        )));
    }
    Ok(GridSpec {
        width: dims.0,
        height: dims.1,
        resolution: extent / (dims.0 - 1) as f64,
        origin: (0.0, 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_spec(objects: Vec<ObjectSpec>) -> SceneSpec {
        SceneSpec {
            version: SCENE_VERSION,
            extent: 0.4,
            resolution: 0.004,
            seed: 0,
            background_roughness: 0.0,
            objects,
        }
    }

    fn centered_box(orientation: f64) -> ObjectSpec {
        ObjectSpec {
            class_id: 1,
            footprint: Footprint::Slab {
                length: 0.1,
                width: 0.1,
            },
            position: (0.2, 0.2),
            orientation,
            base_height: 0.02,
            relief: 0.0,
            relief_period: 0.0,
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_scene(1.024, 0.004, [2, 2, 2], 1).unwrap();
        let b = generate_scene(1.024, 0.004, [2, 2, 2], 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.objects.len(), 6);
        let c = generate_scene(1.024, 0.004, [2, 2, 2], 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn objects_inside_and_disjoint() {
        let s = generate_scene(1.024, 0.004, [3, 3, 3], 11).unwrap();
        for (i, a) in s.objects.iter().enumerate() {
            let ra = a.footprint.bounding_radius();
            assert!(a.position.0 - ra >= 0.0 && a.position.0 + ra <= s.extent);
            assert!(a.position.1 - ra >= 0.0 && a.position.1 + ra <= s.extent);
            for b in &s.objects[i + 1..] {
                let d = ((a.position.0 - b.position.0).powi(2) + (a.position.1 - b.position.1).powi(2)).sqrt();
                assert!(d >= ra + b.footprint.bounding_radius());
            }
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let spec = generate_scene(0.5, 0.01, [0, 0, 0], 3).unwrap();
        assert!(spec.objects.is_empty());
        let scene = Scene::new(spec.clone());
        let gt = rasterize_ground_truth(&scene, &spec.default_grid()).unwrap();
        assert!(gt.labels.iter().all(|&l| l == BACKGROUND));
        assert!(gt.heights.iter().all(|h| h.abs() <= DEFAULT_ROUGHNESS));
    }

    #[test]
    fn family_height_ranges_are_disjoint() {
        let tops: Vec<(f64, f64)> = FAMILIES.iter().map(|f| (f.base.0, f.base.1 + f.relief)).collect();
        for w in tops.windows(2) {
            assert!(w[0].1 < w[1].0, "{tops:?}");
        }
    }

    #[test]
    fn box_plateau_and_patch() {
        let scene = Scene::new(flat_spec(vec![centered_box(0.0)]));
        let grid = GridSpec {
            width: 101,
            height: 101,
            resolution: 0.004,
            origin: (0.0, 0.0),
        };
        let gt = rasterize_ground_truth(&scene, &grid).unwrap();
        // [0.15, 0.25) in both axes: vertices 38..=62 are 0.152..0.248
        let covered = gt.labels.iter().filter(|&&l| l == 1).count();
        let expect = (((0.15f64 / 0.004).ceil() as usize)..((0.25f64 / 0.004).ceil() as usize)).count();
        assert_eq!(covered, expect * expect);
        assert_eq!(scene.height_at(0.2, 0.2).unwrap(), 0.02);
        assert_eq!(scene.height_at(0.01, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn half_open_edges() {
        // binary-exact edges at 0.1875 and 0.3125
        let mut obj = centered_box(0.0);
        obj.position = (0.25, 0.25);
        obj.footprint = Footprint::Slab {
            length: 0.125,
            width: 0.125,
        };
        let scene = Scene::new(flat_spec(vec![obj]));
        assert_eq!(scene.label_at(0.1875, 0.25).unwrap(), 1, "min edge inclusive");
        assert_eq!(scene.label_at(0.3125, 0.25).unwrap(), 0, "max edge exclusive");
        assert_eq!(scene.height_at(0.1875, 0.1875).unwrap(), 0.02);
    }

    #[test]
    fn rotated_box_area_matches() {
        let res = 0.001;
        let n = 401;
        let grid = GridSpec {
            width: n,
            height: n,
            resolution: res,
            origin: (0.0, 0.0),
        };
        for theta in [0.0, PI / 4.0, 0.3] {
            let scene = Scene::new(flat_spec(vec![centered_box(theta)]));
            let gt = rasterize_ground_truth(&scene, &grid).unwrap();
            let count = gt.labels.iter().filter(|&&l| l == 1).count() as f64;
            let cells = 0.1 * 0.1 / (res * res);
            // one boundary-cell band: perimeter / res cells
            let band = 4.0 * 0.1 / res;
            assert!((count - cells).abs() <= band, "theta {theta}: {count} vs {cells}");
        }
    }

    #[test]
    fn out_of_bounds_is_error() {
        let scene = Scene::new(flat_spec(vec![]));
        assert!(matches!(scene.height_at(-0.1, 0.2), Err(Error::OutOfBounds { .. })));
        assert!(scene.height_at(0.4, 0.4).is_ok());
    }

    #[test]
    fn rasterized_matches_height_at_exactly() {
        let spec = generate_scene(0.6, 0.005, [1, 1, 1], 5).unwrap();
        let scene = Scene::new(spec.clone());
        let grid = spec.default_grid();
        let gt = rasterize_ground_truth(&scene, &grid).unwrap();
        for r in (0..grid.height).step_by(3) {
            for c in (0..grid.width).step_by(7) {
                let x = c as f64 * grid.resolution;
                let y = r as f64 * grid.resolution;
                assert_eq!(*gt.heights.get(r, c), scene.height_at(x, y).unwrap());
            }
        }
        // labelled samples sit at or above the background
        for r in 0..grid.height {
            for c in 0..grid.width {
                if *gt.labels.get(r, c) != 0 {
                    let bg = scene.background_height(c as f64 * grid.resolution, r as f64 * grid.resolution);
                    assert!(*gt.heights.get(r, c) >= bg);
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let spec = generate_scene(1.024, 0.004, [1, 2, 1], 9).unwrap();
        let back = SceneSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn infeasible_density_is_rejected() {
        let err = generate_scene(1.0, 0.004, [50, 0, 0], 1).unwrap_err();
        assert!(matches!(err, Error::DensityTooHigh(_)));
    }
}
