//! One-off labelling of a reconstructed height map with a sliding window.
//!
//! Windows step by `o = w - 2r`, where `r` is the receptive-field margin, so
//! every kept output pixel sees the same context as in a single whole-map
//! pass. Only each window's trusted interior is written back.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Snapshot;
use crate::grid::{ClassId, HeightField, BACKGROUND};
use crate::labellers::{InputKind, LabelDistributionImage, LabelInput, Labeller};
use crate::raster::Raster;

/// One convolution layer; pairs are `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvLayer {
    pub fn square(kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            dilation: (dilation, dilation),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub layers: Vec<ConvLayer>,
}

impl ConvSpec {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("conv spec has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let vals = [
                l.kernel.0,
                l.kernel.1,
                l.stride.0,
                l.stride.1,
                l.dilation.0,
                l.dilation.1,
            ];
            if vals.contains(&0) {
                return Err(Error::InvalidParameter(format!(
                    "layer {i}: kernel, stride and dilation must be >= 1"
                )));
            }
        }
        Ok(())
    }
}

/// Parses comma-separated square layers `K[sS][dD]`, e.g. `3s2,3s1d2`.
impl FromStr for ConvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |t: &str| Error::Parse(format!("bad layer '{t}', expected K[sS][dD]"));
        let mut layers = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (mut k, mut st, mut di) = (String::new(), String::new(), String::new());
            let mut cur = &mut k;
            for ch in tok.chars() {
                match ch {
                    's' | 'S' => cur = &mut st,
                    'd' | 'D' => cur = &mut di,
                    c if c.is_ascii_digit() => cur.push(c),
                    _ => return Err(bad(tok)),
                }
            }
            let num = |v: &str, default: usize| -> Result<usize> {
                if v.is_empty() {
                    Ok(default)
                } else {
                    v.parse().map_err(|_| bad(tok))
                }
            };
            if k.is_empty() {
                return Err(bad(tok));
            }
            layers.push(ConvLayer::square(num(&k, 0)?, num(&st, 1)?, num(&di, 1)?));
        }
        ConvSpec::new(layers)
    }
}

/// Theoretical receptive field `(r_x, r_y)` of a conv stack.
pub fn receptive_field(spec: &ConvSpec) -> (usize, usize) {
    let axis = |k: fn(&ConvLayer) -> (usize, usize, usize)| {
        let (mut r, mut j) = (1usize, 1usize);
        for l in &spec.layers {
            let (kernel, stride, dilation) = k(l);
            r += (kernel - 1) * dilation * j;
            j *= stride;
        }
        r
    };
    (
        axis(|l| (l.kernel.0, l.stride.0, l.dilation.0)),
        axis(|l| (l.kernel.1, l.stride.1, l.dilation.1)),
    )
}

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub window: Rect,
    pub trusted: Rect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    /// `(width, height)` of the map in pixels.
    pub map_dims: (usize, usize),
    /// Requested `(w_x, w_y)`.
    pub window: (usize, usize),
    pub rf: (usize, usize),
    pub offset: (usize, usize),
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Total labeller pixel evaluations for one pass.
    pub fn pixel_evals(&self) -> u64 {
        self.tiles.iter().map(|t| t.window.area() as u64).sum()
    }
}

/// Per axis: `(window start, window len, trusted start, trusted len)`.
fn layout_axis(n: usize, w: usize, margin: usize, offset: usize) -> Vec<(usize, usize, usize, usize)> {
    if w >= n {
        return vec![(0, n, 0, n)];
    }
    let mut out = Vec::new();
    let mut end = 0;
    let mut s = 0;
    loop {
        if s + w >= n {
            let s = n - w;
            out.push((s, w, end, n - end));
            return out;
        }
        let valid_end = s + w - margin;
        out.push((s, w, end, valid_end - end));
        end = valid_end;
        s += offset;
    }
}

/// Sliding-window plan with offsets `o = w - 2r`.
pub fn plan_tiles(map_dims: (usize, usize), window: (usize, usize), rf: (usize, usize)) -> Result<TilePlan> {
    for (w, r) in [(window.0, rf.0), (window.1, rf.1)] {
        if w <= 2 * r {
            return Err(Error::WindowTooSmall { window: w, rf: r });
        }
    }
    plan_tiles_with_offset(map_dims, window, rf, (window.0 - 2 * rf.0, window.1 - 2 * rf.1))
}

/// Plan with an explicit offset, e.g. one derived from an effective receptive
/// field. The kept margin becomes `(w - o) / 2`, so context is only
/// guaranteed for labellers whose radius does not exceed it.
pub fn plan_tiles_with_offset(
    map_dims: (usize, usize),
    window: (usize, usize),
    rf: (usize, usize),
    offset: (usize, usize),
) -> Result<TilePlan> {
    if map_dims.0 == 0 || map_dims.1 == 0 {
        return Err(Error::InvalidDimensions("empty map".into()));
    }
    for (w, o) in [(window.0, offset.0), (window.1, offset.1)] {
        if o == 0 || o > w {
            return Err(Error::InvalidParameter(format!("offset {o} must lie in 1..={w}")));
        }
    }
    let xs = layout_axis(map_dims.0, window.0, (window.0 - offset.0) / 2, offset.0);
    let ys = layout_axis(map_dims.1, window.1, (window.1 - offset.1) / 2, offset.1);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &(wr, wh, tr, th) in &ys {
        for &(wc, ww, tc, tw) in &xs {
            tiles.push(Tile {
                window: Rect {
                    row: wr,
                    col: wc,
                    rows: wh,
                    cols: ww,
                },
                trusted: Rect {
                    row: tr,
                    col: tc,
                    rows: th,
                    cols: tw,
                },
            });
        }
    }
    Ok(TilePlan {
        map_dims,
        window,
        rf,
        offset,
        tiles,
    })
}

/// Side information for oracle labellers, in map coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct MapContext<'a> {
    pub truth: Option<&'a Raster<ClassId>>,
    /// Ground-truth heights; degradation is `|reconstructed - reference|`.
    pub reference: Option<&'a Raster<f64>>,
    pub stream: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapLabelStats {
    pub windows: usize,
    pub pixel_evals: u64,
    /// Map pixels labelled from sentinel heights.
    pub unobserved: usize,
}

#[derive(Clone, Debug)]
pub struct MapLabelling {
    pub distribution: LabelDistributionImage,
    pub labels: Raster<ClassId>,
    pub stats: MapLabelStats,
}

fn label_tile(
    heights: &Raster<f64>,
    labeller: &dyn Labeller,
    ctx: &MapContext<'_>,
    tile: &Tile,
) -> Result<LabelDistributionImage> {
    let w = tile.window;
    let values = heights.crop(w.row, w.col, w.cols, w.rows);
    let reference = ctx.reference.map(|r| r.crop(w.row, w.col, w.cols, w.rows));
    let truth = ctx.truth.map(|t| t.crop(w.row, w.col, w.cols, w.rows));
    let mut input = LabelInput::whole(InputKind::Height, &values).with_stream(ctx.stream);
    input.offset = (w.row, w.col);
    input.frame_width = heights.width();
    if let Some(r) = &reference {
        input = input.with_reference(r);
    }
    if let Some(t) = &truth {
        input = input.with_truth(t);
    }
    labeller.label(&input)
}

/// Labels the whole map window by window, using up to `jobs` threads.
pub fn label_map(
    field: &HeightField,
    labeller: &dyn Labeller,
    plan: &TilePlan,
    ctx: &MapContext<'_>,
    jobs: usize,
) -> Result<MapLabelling> {
    let dims = (field.width(), field.height());
    if plan.map_dims != dims {
        return Err(Error::ShapeMismatch {
            expected: dims,
            actual: plan.map_dims,
        });
    }
    let margin = ((plan.window.0 - plan.offset.0) / 2).min((plan.window.1 - plan.offset.1) / 2);
    if labeller.radius() > margin && plan.tiles.len() > 1 {
        return Err(Error::InvalidParameter(format!(
            "labeller radius {} exceeds plan margin {margin}",
            labeller.radius()
        )));
    }
    if labeller.num_classes() != field.num_classes() {
        return Err(Error::InvalidParameter("labeller and field class counts differ".into()));
    }
    let heights = field.height_raster();
    if let Some(t) = ctx.truth {
        heights.same_dims(t)?;
    }
    if let Some(r) = ctx.reference {
        heights.same_dims(r)?;
    }

    let jobs = jobs.clamp(1, plan.tiles.len().max(1));
    let results: Vec<Result<LabelDistributionImage>> = if jobs == 1 {
        plan.tiles
            .iter()
            .map(|t| label_tile(&heights, labeller, ctx, t))
            .collect()
    } else {
        let chunk = plan.tiles.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = plan
                .tiles
                .chunks(chunk)
                .map(|tiles| {
                    let heights = &heights;
                    s.spawn(move || {
                        tiles
                            .iter()
                            .map(|t| label_tile(heights, labeller, ctx, t))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("labelling thread panicked"))
                .collect()
        })
    };

    let mut out = LabelDistributionImage::uniform(dims.0, dims.1, field.num_classes());
    let mut stats = MapLabelStats::default();
    for (tile, res) in plan.tiles.iter().zip(results) {
        let img = res?;
        let (w, t) = (tile.window, tile.trusted);
        let r0 = t.row - w.row;
        let c0 = t.col - w.col;
        out.blit(&img, r0..r0 + t.rows, c0..c0 + t.cols, t.row, t.col);
        stats.windows += 1;
        stats.pixel_evals += w.area() as u64;
    }
    stats.unobserved = field.fusion_weights().iter().filter(|&&w| w <= 0.0).count();
    let labels = out.argmax();
    Ok(MapLabelling {
        distribution: out,
        labels,
        stats,
    })
}

/// Single whole-map pass, the reference for [`label_map`].
pub fn label_whole(field: &HeightField, labeller: &dyn Labeller, ctx: &MapContext<'_>) -> Result<MapLabelling> {
    let dims = (field.width(), field.height());
    let plan = plan_tiles_with_offset(dims, dims, (0, 0), dims)?;
    label_map(field, labeller, &plan, ctx, 1)
}

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct MapEvalEntry {
    pub frames_seen: usize,
    pub coverage: f64,
    /// True when the snapshot was below the coverage threshold and not labelled.
    pub skipped: bool,
    /// Labels with unobserved vertices forced to background.
    pub labels: Option<Raster<ClassId>>,
    pub stats: MapLabelStats,
    pub elapsed_ms: f64,
}

/// Labels a field, forcing unobserved vertices to background.
pub fn label_snapshot(
    field: &HeightField,
    labeller: &dyn Labeller,
    plan: &TilePlan,
    ctx: &MapContext<'_>,
    jobs: usize,
) -> Result<(Raster<ClassId>, MapLabelStats)> {
    let res = label_map(field, labeller, plan, ctx, jobs)?;
    let mut labels = res.labels;
    for (l, &w) in labels.as_mut_slice().iter_mut().zip(field.fusion_weights()) {
        if w <= 0.0 {
            *l = BACKGROUND;
        }
    }
    Ok((labels, res.stats))
}

pub fn run_map_eval(
    snapshots: &[Snapshot],
    labeller: &dyn Labeller,
    plan: &TilePlan,
    ctx: &MapContext<'_>,
    coverage_threshold: f64,
) -> Result<Vec<MapEvalEntry>> {
    let mut out = Vec::with_capacity(snapshots.len());
    for (k, snap) in snapshots.iter().enumerate() {
        let coverage = snap.field.coverage();
        if coverage < coverage_threshold {
            out.push(MapEvalEntry {
                frames_seen: snap.frames_seen,
                coverage,
                skipped: true,
                labels: None,
                stats: MapLabelStats::default(),
                elapsed_ms: 0.0,
            });
            continue;
        }
        let t0 = Instant::now();
        let ctx = MapContext {
            stream: ctx.stream.wrapping_add(k as u64),
            ..*ctx
        };
        let (labels, stats) = label_snapshot(&snap.field, labeller, plan, &ctx, 1)?;
        out.push(MapEvalEntry {
            frames_seen: snap.frames_seen,
            coverage,
            skipped: false,
            labels: Some(labels),
            stats,
            elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labellers::{CorruptionLabeller, CorruptionParams, LogisticLabeller, SoftmaxRegression};
    use proptest::prelude::*;

    #[test]
    fn rf_examples() {
        let rf = |s: &str| receptive_field(&s.parse().unwrap());
        assert_eq!(rf("3"), (3, 3));
        assert_eq!(rf("3s1,3s1"), (5, 5));
        assert_eq!(rf("3s2,3s1"), (7, 7));
        assert_eq!(rf("3d2"), (5, 5));
        assert!("".parse::<ConvSpec>().is_err());
        assert!("3x".parse::<ConvSpec>().is_err());
        assert!("0s1".parse::<ConvSpec>().is_err());
    }

    #[test]
    fn paper_window_offsets() {
        let plan = plan_tiles((1025, 1025), (320, 240), (91, 91)).unwrap();
        assert_eq!(plan.offset, (138, 58));
    }

    #[test]
    fn small_window_is_rejected() {
        assert!(matches!(
            plan_tiles((100, 100), (10, 20), (5, 2)),
            Err(Error::WindowTooSmall { window: 10, rf: 5 })
        ));
    }

    #[test]
    fn single_and_disjoint_plans() {
        let p = plan_tiles((64, 48), (64, 48), (3, 3)).unwrap();
        assert_eq!(p.tiles.len(), 1);
        assert_eq!(
            p.tiles[0].trusted,
            Rect {
                row: 0,
                col: 0,
                rows: 48,
                cols: 64
            }
        );
        let p = plan_tiles((64, 48), (16, 16), (0, 0)).unwrap();
        assert_eq!(p.offset, (16, 16));
        assert_eq!(p.tiles.len(), 12);
        assert!(p.tiles.iter().all(|t| t.trusted == t.window));
    }

    fn check_partition(plan: &TilePlan) {
        let (w, h) = plan.map_dims;
        let mut hits = vec![0u32; w * h];
        for t in &plan.tiles {
            let (win, tr) = (t.window, t.trusted);
            assert!(win.row + win.rows <= h && win.col + win.cols <= w);
            assert!(tr.row >= win.row && tr.col >= win.col);
            assert!(tr.row + tr.rows <= win.row + win.rows && tr.col + tr.cols <= win.col + win.cols);
            for r in tr.row..tr.row + tr.rows {
                for c in tr.col..tr.col + tr.cols {
                    hits[r * w + c] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&n| n == 1));
    }

    fn context_margin_ok(plan: &TilePlan, rho: usize) -> bool {
        let (w, h) = plan.map_dims;
        plan.tiles.iter().all(|t| {
            let (win, tr) = (t.window, t.trusted);
            let top = win.row == 0 || tr.row >= win.row + rho;
            let left = win.col == 0 || tr.col >= win.col + rho;
            let bottom = win.row + win.rows == h || tr.row + tr.rows + rho <= win.row + win.rows;
            let right = win.col + win.cols == w || tr.col + tr.cols + rho <= win.col + win.cols;
            top && left && bottom && right
        })
    }

    fn random_field(w: usize, h: usize, seed: u64) -> (HeightField, Raster<ClassId>) {
        let mut f = HeightField::new(w, h, 0.01, (0.0, 0.0), 4).unwrap();
        let truth = Raster::from_fn(w, h, |r, c| {
            let k = crate::rng::mix_key(&[seed, r as u64 / 3, c as u64 / 4]);
            (k % 4) as ClassId
        });
        for r in 0..h {
            for c in 0..w {
                let u = crate::rng::unit_draw(seed, (r * w + c) as u64);
                let observed = u > 0.05;
                f.set_vertex(
                    r,
                    c,
                    if observed { u * 0.03 } else { 0.0 },
                    if observed { 1.0 } else { 0.0 },
                );
            }
        }
        (f, truth)
    }

    #[test]
    fn stitched_equals_whole_map_for_logistic() {
        let (field, _) = random_field(257, 257, 3);
        let mut model = SoftmaxRegression::zeros(4, crate::labellers::NUM_FEATURES);
        for i in 0..model.num_params() {
            *model.param_mut(i) = ((i * 7919) % 13) as f64 * 0.3 - 1.8;
        }
        let labeller = LogisticLabeller::new(InputKind::Height, 5, model).unwrap();
        let plan = plan_tiles((257, 257), (96, 96), (2, 2)).unwrap();
        let ctx = MapContext::default();
        let tiled = label_map(&field, &labeller, &plan, &ctx, 1).unwrap();
        let whole = label_whole(&field, &labeller, &ctx).unwrap();
        assert_eq!(tiled.distribution, whole.distribution);
        assert_eq!(tiled.labels, whole.labels);
        let parallel = label_map(&field, &labeller, &plan, &ctx, 3).unwrap();
        assert_eq!(parallel.distribution, whole.distribution);
    }

    #[test]
    fn radius_beyond_margin_is_rejected() {
        let (field, truth) = random_field(40, 40, 1);
        let labeller = CorruptionLabeller::new(CorruptionParams {
            boundary_band: 4,
            ..CorruptionParams::perfect(4, 0)
        })
        .unwrap();
        let plan = plan_tiles((40, 40), (16, 16), (2, 2)).unwrap();
        let ctx = MapContext {
            truth: Some(&truth),
            ..Default::default()
        };
        assert!(label_map(&field, &labeller, &plan, &ctx, 1).is_err());
    }

    #[test]
    fn map_eval_skips_until_covered() {
        let (covered, _) = random_field(20, 20, 5);
        let mut full = covered.clone();
        for r in 0..20 {
            for c in 0..20 {
                full.set_vertex(r, c, 0.01, 1.0);
            }
        }
        let truth = Raster::filled(20, 20, 1);
        let snaps: Vec<Snapshot> = [(covered, 10), (full, 20)]
            .into_iter()
            .map(|(field, n)| Snapshot {
                frames_seen: n,
                coverage: field.coverage(),
                labels: field.argmax_labels(),
                field,
            })
            .collect();
        let labeller = CorruptionLabeller::new(CorruptionParams::perfect(4, 0)).unwrap();
        let plan = plan_tiles((20, 20), (10, 10), (1, 1)).unwrap();
        let ctx = MapContext {
            truth: Some(&truth),
            ..Default::default()
        };
        assert!(run_map_eval(&[], &labeller, &plan, &ctx, 0.99).unwrap().is_empty());
        let res = run_map_eval(&snaps, &labeller, &plan, &ctx, 0.99).unwrap();
        assert!(res[0].skipped && res[0].labels.is_none());
        assert!(!res[1].skipped);
        assert_eq!(res[1].labels.as_ref().unwrap(), &truth);
        assert_eq!(res[1].stats.pixel_evals, plan.pixel_evals());
    }

    #[test]
    fn unobserved_vertices_become_background() {
        let (field, _) = random_field(30, 30, 9);
        let truth = Raster::filled(30, 30, 2);
        let labeller = CorruptionLabeller::new(CorruptionParams::perfect(4, 0)).unwrap();
        let plan = plan_tiles((30, 30), (30, 30), (0, 0)).unwrap();
        let ctx = MapContext {
            truth: Some(&truth),
            ..Default::default()
        };
        let (labels, stats) = label_snapshot(&field, &labeller, &plan, &ctx, 1).unwrap();
        assert!(stats.unobserved > 0);
        for r in 0..30 {
            for c in 0..30 {
                let want = if field.is_observed(r, c) { 2 } else { BACKGROUND };
                assert_eq!(*labels.get(r, c), want);
            }
        }
    }

    #[test]
    fn plan_json_lists_tiles() {
        let plan = plan_tiles((50, 40), (20, 20), (3, 3)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(v["tiles"].as_array().unwrap().len(), plan.tiles.len());
        assert_eq!(v["offset"], serde_json::json!([14, 14]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trusted_interiors_partition_the_map(
            w in 1usize..300, h in 1usize..300, wx in 1usize..120, wy in 1usize..120, rx in 0usize..30, ry in 0usize..30,
        ) {
            prop_assume!(wx > 2 * rx && wy > 2 * ry);
            let plan = plan_tiles((w, h), (wx, wy), (rx, ry)).unwrap();
            check_partition(&plan);
            prop_assert!(context_margin_ok(&plan, rx.min(ry)));
        }

        #[test]
        fn offset_override_still_partitions(
            w in 1usize..200, wx in 2usize..60, o in 1usize..60,
        ) {
            prop_assume!(o <= wx);
            let plan = plan_tiles_with_offset((w, w), (wx, wx), (0, 0), (o, o)).unwrap();
            check_partition(&plan);
            prop_assert!(context_margin_ok(&plan, (wx - o) / 2));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn stitched_equals_whole_map_for_corruption(
            w in 8usize..120, h in 8usize..120, win in 8usize..64, rho in 0usize..4, seed in 0u64..1000,
        ) {
            prop_assume!(win > 2 * rho);
            let (field, truth) = random_field(w, h, seed);
            let reference = Raster::from_fn(w, h, |r, c| (r + c) as f64 * 1e-3);
            let labeller = CorruptionLabeller::new(CorruptionParams {
                base_accuracy: 0.8,
                boundary_band: rho,
                boundary_boost: 0.2,
                noise_sensitivity: 10.0,
                ..CorruptionParams::perfect(4, seed)
            }).unwrap();
            let plan = plan_tiles((w, h), (win, win), (rho, rho)).unwrap();
            let ctx = MapContext { truth: Some(&truth), reference: Some(&reference), stream: 7 };
            let tiled = label_map(&field, &labeller, &plan, &ctx, 1).unwrap();
            let whole = label_whole(&field, &labeller, &ctx).unwrap();
            prop_assert_eq!(tiled.distribution, whole.distribution);
        }
    }
}
