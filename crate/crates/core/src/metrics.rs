//! Drawing accuracy via Hu-moment shape distance, and session aggregates.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default raster size for shape comparison.
pub const RASTER_RESOLUTION: usize = 512;

/// Hu invariants smaller than this are treated as zero.
pub const MOMENT_EPSILON: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image has no set pixels")]
    EmptyImage,
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("shape file line {line}: {message}")]
    ShapeSyntax { line: usize, message: String },
    #[error("unknown reference shape {0:?}")]
    UnknownShape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A stroke is a polyline in normalized paper coordinates, `[0, 1]²`.
pub type Stroke = Vec<(f64, f64)>;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// Row-major occupancy, `y * width + x`.
    pub pixels: Vec<bool>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RasterImage({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self { width, height, pixels: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.pixels[y * self.width + x] = true;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|p| **p).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.pixels.iter().any(|p| *p)
    }

    /// Plots an integer line with Bresenham's algorithm, clipping to the image.
    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64)) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            if (0..self.width as i64).contains(&x0) && (0..self.height as i64).contains(&y0) {
                self.set(x0 as usize, y0 as usize);
            }
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

fn to_pixel(p: (f64, f64), res: usize) -> (i64, i64) {
    let scale = (res - 1) as f64;
    ((p.0 * scale).round() as i64, (p.1 * scale).round() as i64)
}

/// Rasterizes normalized strokes onto a `resolution²` image.
pub fn rasterize_strokes(strokes: &[Stroke], resolution: usize) -> RasterImage {
    let mut img = RasterImage::new(resolution, resolution);
    for stroke in strokes {
        match stroke.as_slice() {
            [] => {}
            [only] => {
                let p = to_pixel(*only, resolution);
                img.line(p, p);
            }
            pts => {
                for w in pts.windows(2) {
                    img.line(to_pixel(w[0], resolution), to_pixel(w[1], resolution));
                }
            }
        }
    }
    img
}

pub type HuVector = [f64; 7];

/// The seven Hu invariants of the image's normalized central moments.
pub fn hu_moments(img: &RasterImage) -> Result<HuVector, MetricsError> {
    let mut m00 = 0.0;
    let (mut m10, mut m01) = (0.0, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) {
                m00 += 1.0;
                m10 += x as f64;
                m01 += y as f64;
            }
        }
    }
    if m00 == 0.0 {
        return Err(MetricsError::EmptyImage);
    }
    let (cx, cy) = (m10 / m00, m01 / m00);
    // mu[p][q] for p + q ≤ 3.
    let mut mu = [[0.0_f64; 4]; 4];
    for y in 0..img.height {
        for x in 0..img.width {
            if !img.get(x, y) {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let xp = [1.0, dx, dx * dx, dx * dx * dx];
            let yp = [1.0, dy, dy * dy, dy * dy * dy];
            for p in 0..4 {
                for q in 0..(4 - p) {
                    mu[p][q] += xp[p] * yp[q];
                }
            }
        }
    }
    let eta = |p: usize, q: usize| mu[p][q] / m00.powf(1.0 + (p + q) as f64 / 2.0);
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let a = n30 + n12;
    let b = n21 + n03;
    Ok([
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
    ])
}

/// Log-reciprocal Hu distance between two moment vectors.
pub fn hu_distance(a: &HuVector, b: &HuVector) -> f64 {
    let m = |h: f64| h.signum() * h.abs().log10();
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.abs() >= MOMENT_EPSILON && y.abs() >= MOMENT_EPSILON)
        .map(|(x, y)| (1.0 / m(*x) - 1.0 / m(*y)).abs())
        .sum()
}

pub fn shape_distance(a: &RasterImage, b: &RasterImage) -> Result<f64, MetricsError> {
    Ok(hu_distance(&hu_moments(a)?, &hu_moments(b)?))
}

/// Parses the polyline format: one `x y` pair per line, a blank line ends a
/// stroke, `#` starts a comment.
pub fn parse_strokes(text: &str) -> Result<Vec<Stroke>, MetricsError> {
    let mut strokes = Vec::new();
    let mut current: Stroke = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if raw.trim().is_empty() && !current.is_empty() {
                strokes.push(std::mem::take(&mut current));
            }
            continue;
        }
        let err = |message: String| MetricsError::ShapeSyntax { line: n + 1, message };
        let nums: Vec<&str> = line.split_whitespace().collect();
        if nums.len() != 2 {
            return Err(err(format!("expected two numbers, found {}", nums.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let (x, y) = (parse(nums[0])?, parse(nums[1])?);
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(err(format!("point ({x}, {y}) outside the unit square")));
        }
        current.push((x, y));
    }
    if !current.is_empty() {
        strokes.push(current);
    }
    Ok(strokes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceShape {
    pub name: String,
    pub strokes: Vec<Stroke>,
}

/// Named reference shapes, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSet {
    pub shapes: BTreeMap<String, ReferenceShape>,
}

impl ReferenceSet {
    /// The line, square, triangle and circle shipped with the crate.
    pub fn bundled() -> Self {
        let files = [
            ("circle", include_str!("../../../assets/shapes/circle.txt")),
            ("line", include_str!("../../../assets/shapes/line.txt")),
            ("square", include_str!("../../../assets/shapes/square.txt")),
            ("triangle", include_str!("../../../assets/shapes/triangle.txt")),
        ];
        let mut set = Self::default();
        for (name, text) in files {
            let strokes = parse_strokes(text).expect("bundled shape files are well formed");
            set.insert(ReferenceShape { name: name.into(), strokes });
        }
        set
    }

    /// Loads every `*.txt` file in `dir`, named by file stem.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let mut set = Self::default();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let strokes = parse_strokes(&std::fs::read_to_string(&path)?)?;
            set.insert(ReferenceShape { name, strokes });
        }
        Ok(set)
    }

    pub fn insert(&mut self, shape: ReferenceShape) {
        self.shapes.insert(shape.name.clone(), shape);
    }

    pub fn get(&self, name: &str) -> Result<&ReferenceShape, MetricsError> {
        self.shapes.get(name).ok_or_else(|| MetricsError::UnknownShape(name.into()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.shapes.keys().map(String::as_str).collect()
    }

    /// Distance from `drawn` to every reference, rasterized at `resolution`.
    pub fn distances(&self, drawn: &[Stroke], resolution: usize) -> Result<BTreeMap<String, f64>, MetricsError> {
        let hu = hu_moments(&rasterize_strokes(drawn, resolution))?;
        self.shapes
            .values()
            .map(|s| {
                let r = hu_moments(&rasterize_strokes(&s.strokes, resolution))?;
                Ok((s.name.clone(), hu_distance(&hu, &r)))
            })
            .collect()
    }
}

/// What metrics need from a session log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionTrace {
    pub condition: String,
    pub handshake_end: Option<f64>,
    pub last_contact: Option<f64>,
    /// `(t, quality)` per planner tick.
    pub quality: Vec<(f64, f64)>,
    pub strokes: Vec<Stroke>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub condition: String,
    pub completion_time: f64,
    pub mean_viewpoint_quality: f64,
    pub shape_distance: BTreeMap<String, f64>,
}

/// Sample-and-hold time average over `[from, to]`.
pub fn time_average(samples: &[(f64, f64)], from: f64, to: f64) -> Option<f64> {
    if !(to > from) {
        return None;
    }
    let (mut acc, mut span) = (0.0, 0.0);
    for (k, &(t, v)) in samples.iter().enumerate() {
        let next = samples.get(k + 1).map_or(to, |s| s.0).min(to);
        let start = t.max(from);
        if next > start {
            acc += v * (next - start);
            span += next - start;
        }
    }
    (span > 0.0).then(|| acc / span)
}

pub fn aggregate(trace: &SessionTrace, references: &ReferenceSet) -> Result<SessionMetrics, MetricsError> {
    let start = trace.handshake_end.ok_or_else(|| MetricsError::MalformedLog("no handshake end marker".into()))?;
    let end = trace.last_contact.ok_or_else(|| MetricsError::MalformedLog("pen never touched the paper".into()))?;
    if trace.strokes.iter().all(|s| s.is_empty()) {
        return Err(MetricsError::MalformedLog("no strokes".into()));
    }
    if !(end > start) {
        return Err(MetricsError::MalformedLog(format!("last contact {end} not after handshake end {start}")));
    }
    let mean = time_average(&trace.quality, start, end)
        .ok_or_else(|| MetricsError::MalformedLog("no planner diagnostics inside the session".into()))?;
    Ok(SessionMetrics {
        condition: trace.condition.clone(),
        completion_time: end - start,
        mean_viewpoint_quality: mean,
        shape_distance: references.distances(&trace.strokes, RASTER_RESOLUTION)?,
    })
}
