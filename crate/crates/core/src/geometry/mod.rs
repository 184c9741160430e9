//! Planar geometry: star-shaped shape decoding, polygon measures, convex
//! hulls, boundary sampling, rigid transforms and the shape-comparison
//! metrics (Chamfer distance, F-score, ICP pre-alignment).

mod decode;
mod hull;
mod icp;
mod metrics;

pub use decode::{decode_shape, encode_radii, softplus_inv, ShapeLatent, DEFAULT_R_MIN};
pub use hull::convex_hull;
pub use icp::{icp_align, IcpResult, ICP_DEFAULT_MAX_ITERS, ICP_DEFAULT_TOL};
pub use metrics::{chamfer, fscore, nearest_distances, normalize_unit_box, sample_boundary, DEFAULT_FSCORE_TAU};

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Areas at or below this are treated as degenerate.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Vec2) -> f64 {
        let d = self - o;
        d.x * d.x + d.y * d.y
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// `(b - a) x (c - a)`: positive when `a, b, c` turn counter-clockwise.
pub fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Simple polygon with counter-clockwise vertices and uniform density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    vertices: Vec<Vec2>,
}

impl Polygon2D {
    /// Validates vertex count, finiteness and positive (CCW) orientation.
    /// Simplicity is the caller's responsibility; see [`Polygon2D::is_simple`].
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::geometry(format!("polygon needs 3 vertices, got {}", vertices.len())));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(Error::geometry("non-finite vertex"));
        }
        let p = Polygon2D { vertices };
        let a = p.signed_area();
        if a <= AREA_EPS {
            return Err(Error::geometry(format!("polygon area {a:e} is degenerate or clockwise")));
        }
        Ok(p)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    /// Shoelace area and uniform-density centroid.
    pub fn centroid_area(&self) -> Result<(Vec2, f64)> {
        // Shift to the first vertex to limit cancellation.
        let o = self.vertices[0];
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (p, q) in self.edges() {
            let (p, q) = (p - o, q - o);
            let cr = p.cross(q);
            a2 += cr;
            cx += (p.x + q.x) * cr;
            cy += (p.y + q.y) * cr;
        }
        let area = 0.5 * a2;
        if area <= AREA_EPS {
            return Err(Error::geometry(format!("degenerate polygon, area {area:e}")));
        }
        Ok((Vec2::new(cx / (3.0 * a2), cy / (3.0 * a2)) + o, area))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.dist(b)).sum()
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bbox(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    pub fn map(&self, f: impl Fn(Vec2) -> Vec2) -> Result<Polygon2D> {
        Polygon2D::new(self.vertices.iter().map(|v| f(*v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Result<Polygon2D> {
        self.map(|v| v * s)
    }

    pub fn rotated(&self, angle: f64) -> Result<Polygon2D> {
        self.map(|v| v.rotate(angle))
    }

    pub fn point_set(&self) -> PointSet {
        PointSet::new(self.vertices.clone()).expect("polygon has vertices")
    }

    /// Even-odd containment test; boundary points may go either way.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// No two non-adjacent edges intersect, O(n^2).
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in i + 1..n {
                if j == i || (j + 1) % n == i || j == (i + 1) % n {
                    continue;
                }
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Distance from `p` to the nearest boundary segment.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// Non-empty set of finite points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    points: Vec<Vec2>,
}

impl PointSet {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("point set is empty"));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::input("point set has non-finite coordinates"));
        }
        Ok(PointSet { points })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform2D) -> PointSet {
        PointSet {
            points: self.points.iter().map(|p| t.apply(*p)).collect(),
        }
    }
}

/// Rotation about the origin followed by a translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub angle: f64,
    pub translation: Vec2,
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D = RigidTransform2D {
        angle: 0.0,
        translation: Vec2::new(0.0, 0.0),
    };

    pub fn new(angle: f64, translation: Vec2) -> Self {
        RigidTransform2D { angle, translation }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.angle) + self.translation
    }

    /// `self.then(other)` applies `self` first.
    pub fn then(&self, other: &RigidTransform2D) -> RigidTransform2D {
        RigidTransform2D {
            angle: self.angle + other.angle,
            translation: self.translation.rotate(other.angle) + other.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform2D {
        RigidTransform2D {
            angle: -self.angle,
            translation: (-self.translation).rotate(-self.angle),
        }
    }
}
