//! Planar primitives: poses, vehicle bodies and the separating-axis overlap
//! tests used both by rasterization and by the independent collision oracle.

use serde::{Deserialize, Serialize};

/// Tolerance used when deciding whether two shapes share positive area.
pub const AREA_EPS: f64 = 1e-9;

/// A planar pose of the vehicle reference point (rear axle center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn dist(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        Pose::new(self.x + dx, self.y + dy, self.heading)
    }
}

/// Rectangular vehicle body. `center_offset` is the distance from the pose
/// reference point forward to the geometric center of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyDims {
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub center_offset: f64,
}

impl BodyDims {
    pub const fn centered(length: f64, width: f64) -> Self {
        Self {
            length,
            width,
            center_offset: 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.length <= 0.0 || self.width <= 0.0
    }

    /// Geometric center of the body for a given reference pose.
    pub fn center(&self, pose: &Pose) -> (f64, f64) {
        let (s, c) = pose.heading.sin_cos();
        (
            pose.x + self.center_offset * c,
            pose.y + self.center_offset * s,
        )
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self, pose: &Pose) -> [(f64, f64); 4] {
        let (cx, cy) = self.center(pose);
        let (s, c) = pose.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let pt = |lx: f64, ly: f64| (cx + lx * c - ly * s, cy + lx * s + ly * c);
        [pt(hl, hw), pt(-hl, hw), pt(-hl, -hw), pt(hl, -hw)]
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains_point(&self, p: (f64, f64), tol: f64) -> bool {
        p.0 >= self.x0 - tol && p.0 <= self.x1 + tol && p.1 >= self.y0 - tol && p.1 <= self.y1 + tol
    }

    pub fn contains_rect(&self, other: &Rect, tol: f64) -> bool {
        other.x0 >= self.x0 - tol
            && other.x1 <= self.x1 + tol
            && other.y0 >= self.y0 - tol
            && other.y1 <= self.y1 + tol
    }

    /// True when the interiors intersect (touching edges do not count).
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 - AREA_EPS
            && other.x0 < self.x1 - AREA_EPS
            && self.y0 < other.y1 - AREA_EPS
            && other.y0 < self.y1 - AREA_EPS
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x1, self.y1),
            (self.x0, self.y1),
        ]
    }
}

fn project(poly: &[(f64, f64)], axis: (f64, f64)) -> (f64, f64) {
    poly.iter()
        .map(|p| p.0 * axis.0 + p.1 * axis.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

fn edge_normals(poly: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let n = dx.hypot(dy);
        if n > 0.0 {
            out.push((-dy / n, dx / n));
        }
    }
}

/// Whether two convex polygons share strictly positive area. Separating axes
/// are the edge normals of both polygons; touching projections separate.
pub fn convex_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    let mut axes = Vec::with_capacity(a.len() + b.len());
    edge_normals(a, &mut axes);
    edge_normals(b, &mut axes);
    if axes.is_empty() {
        return false;
    }
    axes.iter().all(|&axis| {
        let (alo, ahi) = project(a, axis);
        let (blo, bhi) = project(b, axis);
        ahi > blo + AREA_EPS && bhi > alo + AREA_EPS
    })
}

/// Positive-area overlap of two vehicle bodies in continuous space.
pub fn bodies_overlap(pa: &Pose, ba: &BodyDims, pb: &Pose, bb: &BodyDims) -> bool {
    if ba.is_degenerate() || bb.is_degenerate() {
        return false;
    }
    convex_overlap(&ba.corners(pa), &bb.corners(pb))
}

/// Axis-aligned bounding box of a body at a pose.
pub fn body_aabb(pose: &Pose, body: &BodyDims) -> Rect {
    let cs = body.corners(pose);
    let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in cs {
        r.x0 = r.x0.min(x);
        r.y0 = r.y0.min(y);
        r.x1 = r.x1.max(x);
        r.y1 = r.y1.max(y);
    }
    r
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
