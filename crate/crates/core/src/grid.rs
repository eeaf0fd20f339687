//! Regular-grid triangular height mesh with per-vertex semantic posteriors.
//!
//! Vertex `(row, col)` sits at world `origin + (col, row) * resolution`, so
//! rows advance along +y and columns along +x. Every cell is split along the
//! diagonal from its lower-left vertex `(row, col)` to its upper-right vertex
//! `(row + 1, col + 1)`:
//!
//! ```text
//!   (r+1,c) ---- (r+1,c+1)
//!      |  Upper  /  |
//!      |       /    |
//!      |     /      |
//!      |   /  Lower |
//!   (r,c) ------ (r,c+1)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Semantic class index. Class 0 is the background surface.
pub type ClassId = u8;

pub const BACKGROUND: ClassId = 0;

/// Categorical distribution over classes, kept as log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPosterior {
    log_probs: Vec<f64>,
}

impl ClassPosterior {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            log_probs: vec![-(num_classes as f64).ln(); num_classes],
        }
    }

    /// Builds a posterior from unnormalized log-weights.
    pub fn from_log_weights(mut log_probs: Vec<f64>) -> Self {
        normalize_log(&mut log_probs);
        Self { log_probs }
    }

    pub fn num_classes(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> ClassId {
        argmax_lowest(&self.log_probs) as ClassId
    }
}

/// Index of the maximum, lowest index winning ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Subtracts log-sum-exp in place. Returns false if every entry is `-inf`.
pub(crate) fn normalize_log(log_probs: &mut [f64]) -> bool {
    let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let lse = max + log_probs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for l in log_probs.iter_mut() {
        *l -= lse;
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Triangle {
    /// Vertices `(r,c)`, `(r,c+1)`, `(r+1,c+1)`.
    Lower,
    /// Vertices `(r,c)`, `(r+1,c)`, `(r+1,c+1)`.
    Upper,
}

/// Result of placing a world point on the mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub cell: (usize, usize),
    pub triangle: Triangle,
    /// `(row, col)` of the three triangle vertices.
    pub vertices: [(usize, usize); 3],
    /// Barycentric weights matching `vertices`.
    pub weights: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    num_classes: usize,
    heights: Vec<f64>,
    weights: Vec<f64>,
    log_post: Vec<f64>,
}

/// Geometry of a grid without any per-vertex state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
}

impl HeightField {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64), num_classes: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidDimensions(format!(
                "grid needs at least 2x2 vertices, got {width}x{height}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidDimensions(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !(2..=usize::from(u8::MAX)).contains(&num_classes) {
            return Err(Error::InvalidDimensions(format!(
                "need between 2 and 255 classes, got {num_classes}"
            )));
        }
        let n = width * height;
        let uniform = -(num_classes as f64).ln();
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            num_classes,
            heights: vec![0.0; n],
            weights: vec![0.0; n],
            log_post: vec![uniform; n * num_classes],
        })
    }

    pub fn from_spec(spec: GridSpec, num_classes: usize) -> Result<Self> {
        Self::new(spec.width, spec.height, spec.resolution, spec.origin, num_classes)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            origin: self.origin,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_vertices(&self) -> usize {
        self.width * self.height
    }

    pub fn num_triangles(&self) -> usize {
        2 * (self.width - 1) * (self.height - 1)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn vertex_xy(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + col as f64 * self.resolution,
            self.origin.1 + row as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn height_at(&self, row: usize, col: usize) -> f64 {
        self.heights[self.index(row, col)]
    }

    #[inline]
    pub fn weight_at(&self, row: usize, col: usize) -> f64 {
        self.weights[self.index(row, col)]
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.weight_at(row, col) > 0.0
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn fusion_weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn heights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.heights, &mut self.weights)
    }

    /// Log-posterior slice of one vertex, by flat index.
    #[inline]
    pub fn log_posterior(&self, idx: usize) -> &[f64] {
        &self.log_post[idx * self.num_classes..(idx + 1) * self.num_classes]
    }

    #[inline]
    pub(crate) fn log_posterior_mut(&mut self, idx: usize) -> &mut [f64] {
        let c = self.num_classes;
        &mut self.log_post[idx * c..(idx + 1) * c]
    }

    pub fn posterior(&self, row: usize, col: usize) -> ClassPosterior {
        ClassPosterior {
            log_probs: self.log_posterior(self.index(row, col)).to_vec(),
        }
    }

    /// Overwrites a vertex posterior.
    pub fn set_posterior(&mut self, row: usize, col: usize, posterior: &ClassPosterior) -> Result<()> {
        if posterior.num_classes() != self.num_classes {
            return Err(Error::InvalidParameter(format!(
                "posterior has {} classes, field has {}",
                posterior.num_classes(),
                self.num_classes
            )));
        }
        let idx = self.index(row, col);
        self.log_posterior_mut(idx).copy_from_slice(posterior.log_probs());
        Ok(())
    }

    /// Sets geometry of one vertex directly (used by importers and tests).
    pub fn set_vertex(&mut self, row: usize, col: usize, height: f64, weight: f64) {
        let idx = self.index(row, col);
        self.heights[idx] = height;
        self.weights[idx] = weight;
    }

    /// Fraction of vertices with nonzero fusion weight.
    pub fn coverage(&self) -> f64 {
        self.weights.iter().filter(|&&w| w > 0.0).count() as f64 / self.num_vertices() as f64
    }

    /// Places a world point on the mesh. Returns `None` outside the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<Location> {
        locate_in(&self.spec(), x, y)
    }

    /// Per-vertex argmax of the posterior; unobserved vertices map to background.
    pub fn argmax_labels(&self) -> Raster<ClassId> {
        Raster::from_fn(self.width, self.height, |r, c| {
            let idx = self.index(r, c);
            if self.weights[idx] > 0.0 {
                argmax_lowest(self.log_posterior(idx)) as ClassId
            } else {
                BACKGROUND
            }
        })
    }

    pub fn height_raster(&self) -> Raster<f64> {
        Raster::from_vec(self.width, self.height, self.heights.clone()).expect("dims")
    }

    pub fn observed_mask(&self) -> Raster<bool> {
        Raster::from_fn(self.width, self.height, |r, c| self.is_observed(r, c))
    }

    /// Writes heights as 16-bit big-endian binary PGM.
    ///
    /// Values are quantized linearly: `q = round((h - min) / (max - min) * 65535)`,
    /// with `min` and `max` recorded in a header comment. Row 0 is written first.
    pub fn write_height_pgm<W: Write>(&self, out: W) -> Result<()> {
        write_pgm16_linear(out, &self.height_raster())
    }

    /// CSV with header `row,col,height,weight`.
    pub fn write_height_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,height,weight")?;
        for r in 0..self.height {
            for c in 0..self.width {
                let i = self.index(r, c);
                writeln!(out, "{r},{c},{},{}", self.heights[i], self.weights[i])?;
            }
        }
        Ok(())
    }

    /// CSV with header `row,col,p_0,...,p_{C-1}` holding normalized probabilities.
    pub fn write_posterior_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("row,col");
        for k in 0..self.num_classes {
            write!(header, ",p_{k}").unwrap();
        }
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                line.clear();
                write!(line, "{r},{c}").unwrap();
                for l in self.log_posterior(self.index(r, c)) {
                    write!(line, ",{}", l.exp()).unwrap();
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    /// Full field state: a `#`-prefixed geometry line, then
    /// `row,col,height,weight,logp_0,...`. Floats use shortest round-trip
    /// formatting so [`HeightField::read_state_csv`] restores the field exactly.
    pub fn write_state_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# width={} height={} resolution={} origin_x={} origin_y={} classes={}",
            self.width, self.height, self.resolution, self.origin.0, self.origin.1, self.num_classes
        )?;
        let mut header = String::from("row,col,height,weight");
        for k in 0..self.num_classes {
            write!(header, ",logp_{k}").unwrap();
        }
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let i = self.index(r, c);
                line.clear();
                write!(line, "{r},{c},{},{}", self.heights[i], self.weights[i]).unwrap();
                for l in self.log_posterior(i) {
                    write!(line, ",{l}").unwrap();
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_state_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let geometry = lines.next().ok_or_else(|| Error::Parse("empty state file".into()))??;
        let get = |key: &str| -> Result<String> {
            geometry
                .trim_start_matches('#')
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse(format!("missing `{key}` in state header")))
        };
        let parse_f = |s: String| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
        let parse_u = |s: String| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
        let width = parse_u(get("width")?)?;
        let height = parse_u(get("height")?)?;
        let resolution = parse_f(get("resolution")?)?;
        let origin = (parse_f(get("origin_x")?)?, parse_f(get("origin_y")?)?);
        let classes = parse_u(get("classes")?)?;
        let mut field = Self::new(width, height, resolution, origin, classes)?;
        lines.next(); // column header
        let mut seen = 0;
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 + classes {
                return Err(Error::Parse(format!("bad state row: {line}")));
            }
            let pf = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
            let r: usize = cols[0].parse().map_err(|_| Error::Parse(line.clone()))?;
            let c: usize = cols[1].parse().map_err(|_| Error::Parse(line.clone()))?;
            if r >= height || c >= width {
                return Err(Error::Parse(format!("vertex ({r},{c}) outside grid")));
            }
            field.set_vertex(r, c, pf(cols[2])?, pf(cols[3])?);
            let idx = field.index(r, c);
            for (k, slot) in field.log_posterior_mut(idx).iter_mut().enumerate() {
                *slot = pf(cols[4 + k])?;
            }
            seen += 1;
        }
        if seen != width * height {
            return Err(Error::Parse(format!(
                "expected {} vertices, found {seen}",
                width * height
            )));
        }
        Ok(field)
    }
}

pub(crate) fn locate_in(spec: &GridSpec, x: f64, y: f64) -> Option<Location> {
    let fx = (x - spec.origin.0) / spec.resolution;
    let fy = (y - spec.origin.1) / spec.resolution;
    let max_c = (spec.width - 1) as f64;
    let max_r = (spec.height - 1) as f64;
    if !(fx >= 0.0 && fy >= 0.0 && fx <= max_c && fy <= max_r) {
        return None;
    }
    let col = (fx.floor() as usize).min(spec.width - 2);
    let row = (fy.floor() as usize).min(spec.height - 2);
    let u = fx - col as f64;
    let v = fy - row as f64;
    let (triangle, vertices, weights) = if u >= v {
        (
            Triangle::Lower,
            [(row, col), (row, col + 1), (row + 1, col + 1)],
            [1.0 - u, u - v, v],
        )
    } else {
        (
            Triangle::Upper,
            [(row, col), (row + 1, col), (row + 1, col + 1)],
            [1.0 - v, v - u, u],
        )
    };
    Some(Location {
        cell: (row, col),
        triangle,
        vertices,
        weights,
    })
}

/// Writes a label grid as whitespace-separated integers, one grid row per line.
pub fn write_label_grid<W: Write>(mut out: W, labels: &Raster<ClassId>) -> Result<()> {
    let mut line = String::new();
    for r in 0..labels.height() {
        line.clear();
        for c in 0..labels.width() {
            if c > 0 {
                line.push(' ');
            }
            write!(line, "{}", labels.get(r, c)).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_label_grid<R: BufRead>(input: R) -> Result<Raster<ClassId>> {
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<ClassId> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad label `{t}`"))))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(Error::Parse(format!("ragged label grid at row {rows}"))),
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Raster::from_vec(width.unwrap_or(0), rows, data)
}

/// Writes a label grid as CSV `row,col,label`.
pub fn write_label_csv<W: Write>(mut out: W, labels: &Raster<ClassId>) -> Result<()> {
    writeln!(out, "row,col,label")?;
    for r in 0..labels.height() {
        for c in 0..labels.width() {
            writeln!(out, "{r},{c},{}", labels.get(r, c))?;
        }
    }
    Ok(())
}

/// 16-bit big-endian PGM with linear quantization between the data min and max.
pub fn write_pgm16_linear<W: Write>(mut out: W, values: &Raster<f64>) -> Result<()> {
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let (min, max) = if values.is_empty() { (0.0, 0.0) } else { (min, max) };
    let span = max - min;
    write!(
        out,
        "P5\n# min {min} max {max}\n{} {}\n65535\n",
        values.width(),
        values.height()
    )?;
    let mut buf = Vec::with_capacity(values.len() * 2);
    for &v in values.iter() {
        let q = if span > 0.0 {
            ((v - min) / span * 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&q.to_be_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads back a file produced by [`write_pgm16_linear`], dequantizing with the header range.
pub fn read_pgm16_linear(bytes: &[u8]) -> Result<Raster<f64>> {
    let mut fields = Vec::new();
    let mut comment = None;
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            comment = Some(String::from_utf8_lossy(&bytes[pos + 1..end]).into_owned());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(Error::Parse("expected 16-bit P5 PGM".into()));
    }
    let w: usize = fields[1].parse().map_err(|_| Error::Parse("width".into()))?;
    let h: usize = fields[2].parse().map_err(|_| Error::Parse("height".into()))?;
    let (min, max): (f64, f64) = comment
        .as_deref()
        .and_then(|c| {
            let t: Vec<&str> = c.split_whitespace().collect();
            match t.as_slice() {
                ["min", lo, "max", hi] => Some((lo.parse().ok()?, hi.parse().ok()?)),
                _ => None,
            }
        })
        .ok_or_else(|| Error::Parse("missing min/max comment".into()))?;
    let body = &bytes[pos..];
    if body.len() < w * h * 2 {
        return Err(Error::Parse("truncated PGM body".into()));
    }
    let span: f64 = max - min;
    let data = body
        .chunks_exact(2)
        .take(w * h)
        .map(|b| min + f64::from(u16::from_be_bytes([b[0], b[1]])) / 65535.0 * span)
        .collect();
    Raster::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_field_is_uniform_and_unobserved() {
        let f = HeightField::new(257, 257, 0.004, (0.0, 0.0), 4).unwrap();
        for r in [0, 100, 256] {
            for c in [0, 17, 256] {
                let p = f.posterior(r, c).probs();
                assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(!f.is_observed(r, c));
            }
        }
        assert_eq!(f.coverage(), 0.0);
    }

    #[test]
    fn large_field_extent() {
        let f = HeightField::new(1025, 1025, 0.004, (0.0, 0.0), 4).unwrap();
        let (x, y) = f.vertex_xy(1024, 1024);
        assert!((x - 4.096).abs() < 1e-12 && (y - 4.096).abs() < 1e-12);
        assert!((f.posterior(512, 512).probs()[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn minimal_grid() {
        let f = HeightField::new(2, 2, 1.0, (0.0, 0.0), 2).unwrap();
        assert_eq!(f.num_vertices(), 4);
        assert_eq!(f.num_triangles(), 2);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(HeightField::new(1, 5, 1.0, (0.0, 0.0), 2).is_err());
        assert!(HeightField::new(5, 5, 0.0, (0.0, 0.0), 2).is_err());
        assert!(HeightField::new(5, 5, 1.0, (0.0, 0.0), 1).is_err());
    }

    #[test]
    fn locate_vertex_centroid_and_edge() {
        let f = HeightField::new(4, 4, 0.5, (1.0, 2.0), 2).unwrap();
        // vertex (1, 2)
        let loc = f.locate(2.0, 2.5).unwrap();
        let w: f64 = loc
            .vertices
            .iter()
            .zip(loc.weights)
            .filter(|(v, _)| **v == (1, 2))
            .map(|(_, w)| w)
            .sum();
        assert_eq!(w, 1.0);
        assert_eq!(loc.weights.iter().filter(|&&w| w == 0.0).count(), 2);

        // centroid of the lower triangle of cell (0, 0)
        let loc = f.locate(1.0 + 0.5 * 2.0 / 3.0, 2.0 + 0.5 / 3.0).unwrap();
        assert_eq!(loc.triangle, Triangle::Lower);
        for w in loc.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }

        // midpoint of the shared diagonal of cell (0, 0)
        let loc = f.locate(1.25, 2.25).unwrap();
        assert_eq!(loc.vertices[0], (0, 0));
        assert_eq!(loc.vertices[2], (1, 1));
        assert!((loc.weights[0] - 0.5).abs() < 1e-12);
        assert!(loc.weights[1].abs() < 1e-12);
        assert!((loc.weights[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn locate_misses_outside() {
        let f = HeightField::new(3, 3, 1.0, (0.0, 0.0), 2).unwrap();
        assert!(f.locate(-0.01, 1.0).is_none());
        assert!(f.locate(1.0, 2.01).is_none());
        assert!(f.locate(f64::NAN, 1.0).is_none());
        assert!(f.locate(2.0, 2.0).is_some());
    }

    #[test]
    fn argmax_conventions() {
        let mut f = HeightField::new(3, 2, 1.0, (0.0, 0.0), 4).unwrap();
        f.set_vertex(0, 0, 0.0, 1.0);
        f.set_vertex(0, 1, 0.0, 1.0);
        let p = ClassPosterior::from_log_weights(vec![0.1f64.ln(), 0.7f64.ln(), 0.1f64.ln(), 0.1f64.ln()]);
        f.set_posterior(0, 1, &p).unwrap();
        f.set_posterior(1, 1, &p).unwrap();
        let labels = f.argmax_labels();
        assert_eq!(*labels.get(0, 0), 0, "uniform ties break low");
        assert_eq!(*labels.get(0, 1), 1);
        assert_eq!(*labels.get(1, 1), 0, "unobserved is background");
    }

    #[test]
    fn state_round_trip_is_exact() {
        let mut f = HeightField::new(5, 4, 0.004, (0.1, -0.3), 3).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                f.set_vertex(r, c, 0.001 * (r * 7 + c) as f64 / 3.0, (r + c) as f64 * 0.37);
                let p = ClassPosterior::from_log_weights(vec![0.3 * r as f64, -1.7, (c as f64).sqrt()]);
                f.set_posterior(r, c, &p).unwrap();
            }
        }
        f.set_posterior(
            2,
            2,
            &ClassPosterior {
                log_probs: vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        f.write_state_csv(&mut buf).unwrap();
        let g = HeightField::read_state_csv(buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn pgm_header_and_quantization() {
        let mut f = HeightField::new(3, 2, 1.0, (0.0, 0.0), 2).unwrap();
        f.set_vertex(0, 0, -0.01, 1.0);
        f.set_vertex(1, 2, 0.03, 1.0);
        let mut buf = Vec::new();
        f.write_height_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n# min -0.01 max 0.03\n3 2\n65535\n"));
        let back = read_pgm16_linear(&buf).unwrap();
        assert_eq!(back.dims(), (3, 2));
        assert!((back.get(1, 2) - 0.03).abs() < 1e-12);
        assert!((back.get(0, 1) - 0.0).abs() <= 0.04 / 65535.0);
    }

    #[test]
    fn label_grid_text_round_trip() {
        let labels = Raster::from_fn(4, 3, |r, c| ((r + c) % 4) as ClassId);
        let mut buf = Vec::new();
        write_label_grid(&mut buf, &labels).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().next(), Some("0 1 2 3"));
        assert_eq!(read_label_grid(buf.as_slice()).unwrap(), labels);
    }

    proptest! {
        #[test]
        fn locate_reconstructs_point(x in 0.0f64..1.0, y in 0.0f64..1.0, res in 0.001f64..2.0) {
            let f = HeightField::new(9, 7, res, (-3.0, 5.0), 2).unwrap();
            let px = -3.0 + x * 8.0 * res;
            let py = 5.0 + y * 6.0 * res;
            let loc = f.locate(px, py).unwrap();
            // reconstruct relative to the cell corner so the tolerance is scale-free
            let (ox, oy) = f.vertex_xy(loc.cell.0, loc.cell.1);
            let mut rx = 0.0;
            let mut ry = 0.0;
            for (&(r, c), &w) in loc.vertices.iter().zip(&loc.weights) {
                prop_assert!(w >= -1e-15);
                let (vx, vy) = f.vertex_xy(r, c);
                rx += w * (vx - ox);
                ry += w * (vy - oy);
            }
            prop_assert!((loc.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((rx - (px - ox)).abs() <= 1e-12 * res);
            prop_assert!((ry - (py - oy)).abs() <= 1e-12 * res);
        }
    }
}
