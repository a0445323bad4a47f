//! Triangle meshes, segment queries and the bounding-volume tree used as the
//! occlusion oracle of the camera planner.

mod io;
mod tree;

pub use io::{load_mesh, parse_off, parse_stl_ascii, write_off, MeshFormat};
pub use tree::{AabbTree, TreeNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, Vec3};

/// Absolute tolerance, in meters, for segment/triangle contact.
pub const INTERSECTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: usize, count: usize },
    #[error("vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("binary STL is not supported; convert to ASCII STL or OFF")]
    BinaryStl,
    #[error("unknown mesh format for {0}")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFiniteVertex(i));
        }
        let count = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, count });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_soup(&self) -> impl Iterator<Item = [Vec3; 3]> + '_ {
        (0..self.triangles.len()).map(move |t| self.triangle(t))
    }

    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn transformed(&self, pose: &Pose) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn merge(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }

    /// Axis-aligned box with corners `min` and `max`, 12 triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let vertices = vec![
            v(min.x, min.y, min.z),
            v(max.x, min.y, min.z),
            v(max.x, max.y, min.z),
            v(min.x, max.y, min.z),
            v(min.x, min.y, max.z),
            v(max.x, min.y, max.z),
            v(max.x, max.y, max.z),
            v(min.x, max.y, max.z),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriangleMesh { vertices, triangles }
    }

    /// Closed prism along local z from `z0` to `z1` with a regular polygon
    /// cross-section of `sides` vertices at `radius`.
    pub fn prism(radius: f64, z0: f64, z1: f64, sides: usize) -> TriangleMesh {
        let sides = sides.max(3);
        let mut vertices = Vec::with_capacity(2 * sides + 2);
        for &z in &[z0, z1] {
            for k in 0..sides {
                let a = std::f64::consts::TAU * k as f64 / sides as f64;
                vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        let bottom_center = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, z0));
        let top_center = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, z1));
        let mut triangles = Vec::with_capacity(4 * sides);
        for k in 0..sides {
            let k1 = (k + 1) % sides;
            triangles.push([k, k1, sides + k1]);
            triangles.push([k, sides + k1, sides + k]);
            triangles.push([bottom_center, k1, k]);
            triangles.push([top_center, sides + k, sides + k1]);
        }
        TriangleMesh { vertices, triangles }
    }

    /// Splits every triangle into four, `levels` times.
    pub fn subdivided(&self, levels: usize) -> TriangleMesh {
        let mut mesh = self.clone();
        for _ in 0..levels {
            let mut vertices = mesh.vertices.clone();
            let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
            for t in &mesh.triangles {
                let mut mid = |i: usize, j: usize| {
                    vertices.push((mesh.vertices[i] + mesh.vertices[j]) * 0.5);
                    vertices.len() - 1
                };
                let ab = mid(t[0], t[1]);
                let bc = mid(t[1], t[2]);
                let ca = mid(t[2], t[0]);
                triangles.extend_from_slice(&[[t[0], ab, ca], [ab, t[1], bc], [ca, bc, t[2]], [ab, bc, ca]]);
            }
            mesh = TriangleMesh { vertices, triangles };
        }
        mesh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.grow_point(p);
        }
        Some(b)
    }

    pub fn of_triangle(t: &[Vec3; 3]) -> Aabb {
        Aabb { min: t[0].inf(&t[1]).inf(&t[2]), max: t[0].sup(&t[1]).sup(&t[2]) }
    }

    pub fn grow_point(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.min[i] && other.max[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test of the segment against the box grown by `margin`.
    pub fn intersects_segment(&self, s: &Segment, margin: f64) -> bool {
        let d = s.b - s.a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for i in 0..3 {
            let lo = self.min[i] - margin;
            let hi = self.max[i] + margin;
            if d[i].abs() < 1e-300 {
                if s.a[i] < lo || s.a[i] > hi {
                    return false;
                }
            } else {
                let inv = 1.0 / d[i];
                let (mut ta, mut tb) = ((lo - s.a[i]) * inv, (hi - s.a[i]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec3,
    pub b: Vec3,
}

impl Segment {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Same segment with the `b` end pulled back by `amount` meters.
    pub fn shortened_at_end(&self, amount: f64) -> Segment {
        let d = self.b - self.a;
        let len = d.norm();
        if len <= amount {
            return Segment { a: self.a, b: self.a };
        }
        Segment { a: self.a, b: self.b - d * (amount / len) }
    }
}

/// Whether segment `s` touches triangle `t` within `tol` meters.
pub fn segment_hits_triangle(s: &Segment, t: &[Vec3; 3], tol: f64) -> bool {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let n = e1.cross(&e2);
    let n_norm = n.norm();
    if n_norm < 1e-300 {
        // Degenerate triangle: treat as its three edges.
        return (0..3).any(|i| segment_segment_distance(s.a, s.b, t[i], t[(i + 1) % 3]) <= tol);
    }
    let n = n / n_norm;
    let da = n.dot(&(s.a - t[0]));
    let db = n.dot(&(s.b - t[0]));
    if (da > tol && db > tol) || (da < -tol && db < -tol) {
        return false;
    }
    if da.abs() <= tol && db.abs() <= tol {
        return coplanar_segment_hits(s, t, &n, tol);
    }
    let p = if da.abs() <= tol {
        s.a
    } else if db.abs() <= tol {
        s.b
    } else {
        let u = da / (da - db);
        s.a + (s.b - s.a) * u
    };
    point_in_triangle(&p, t, &n, tol)
}

fn point_in_triangle(p: &Vec3, t: &[Vec3; 3], n: &Vec3, tol: f64) -> bool {
    (0..3).all(|i| {
        let a = t[i];
        let b = t[(i + 1) % 3];
        let edge = b - a;
        let len = edge.norm();
        if len < 1e-300 {
            return true;
        }
        let inward = n.cross(&edge) / len;
        inward.dot(&(p - a)) >= -tol
    })
}

fn coplanar_segment_hits(s: &Segment, t: &[Vec3; 3], n: &Vec3, tol: f64) -> bool {
    if point_in_triangle(&s.a, t, n, tol) || point_in_triangle(&s.b, t, n, tol) {
        return true;
    }
    (0..3).any(|i| segment_segment_distance(s.a, s.b, t[i], t[(i + 1) % 3]) <= tol)
}

/// Minimum distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-300 && e <= 1e-300 {
        return r.norm();
    }
    if a <= 1e-300 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-300 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-300 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Anything that can answer "does this segment touch an occluder?".
pub trait OcclusionIndex: Send + Sync {
    fn segment_hits(&self, s: &Segment) -> bool;
    fn triangle_count(&self) -> usize;
}

impl OcclusionIndex for AabbTree {
    fn segment_hits(&self, s: &Segment) -> bool {
        self.segment_intersects(s)
    }

    fn triangle_count(&self) -> usize {
        self.triangles().len()
    }
}

/// Exhaustive per-triangle test; no acceleration structure.
#[derive(Debug, Clone, Default)]
pub struct BruteForceIndex {
    triangles: Vec<[Vec3; 3]>,
}

impl BruteForceIndex {
    pub fn new(meshes: &[TriangleMesh]) -> Self {
        Self { triangles: meshes.iter().flat_map(|m| m.triangle_soup()).collect() }
    }
}

impl OcclusionIndex for BruteForceIndex {
    fn segment_hits(&self, s: &Segment) -> bool {
        self.triangles.iter().any(|t| segment_hits_triangle(s, t, INTERSECTION_TOLERANCE))
    }

    fn triangle_count(&self) -> usize {
        self.triangles.len()
    }
}

type IndexBuilder = fn(&[TriangleMesh]) -> Box<dyn OcclusionIndex>;

/// Occlusion backends selectable by name.
pub struct OcclusionRegistry {
    entries: Vec<(&'static str, IndexBuilder)>,
}

impl Default for OcclusionRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register("aabb-tree", |m| Box::new(AabbTree::build(m)));
        r.register("brute-force", |m| Box::new(BruteForceIndex::new(m)));
        r
    }
}

impl OcclusionRegistry {
    pub fn register(&mut self, name: &'static str, builder: IndexBuilder) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, builder));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, name: &str, meshes: &[TriangleMesh]) -> Option<Box<dyn OcclusionIndex>> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, b)| b(meshes))
    }
}
