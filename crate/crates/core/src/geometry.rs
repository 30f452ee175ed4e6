//! Oriented boxes, convex polygon clipping and rotated IoU.
//!
//! Boxes use the long-edge convention: `h` is the long side, `w` the short
//! side and `theta` the angle between the +x axis and the long side, measured
//! towards +y (counter-clockwise in a y-up frame), wrapped into `[-pi/2, pi/2)`.
//! Angles are radians here; file and CLI surfaces convert to degrees.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into the half-open range `[-pi/2, pi/2)` modulo `pi`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    // floor() can land one period off when theta sits within an ulp of a boundary.
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Oriented bounding box `(cx, cy, h, w, theta)` with an optional confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObbBox {
    pub cx: f64,
    pub cy: f64,
    /// Long side.
    pub h: f64,
    /// Short side.
    pub w: f64,
    /// Radians in `[-pi/2, pi/2)`.
    pub theta: f64,
    pub score: Option<f64>,
}

impl ObbBox {
    /// Builds a canonical box from two side lengths in any order.
    ///
    /// `a` lies along `theta_raw`, `b` across it. When `a < b` the long side is
    /// the `b` edge, so the angle is rotated by `pi/2` before wrapping.
    pub fn canonicalize(cx: f64, cy: f64, a: f64, b: f64, theta_raw: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && theta_raw.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite parameters ({cx}, {cy}, {theta_raw})"
            )));
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "side lengths must be positive and finite, got {a} x {b}"
            )));
        }
        let (h, w, theta) = if a < b {
            (b, a, theta_raw + FRAC_PI_2)
        } else {
            (a, b, theta_raw)
        };
        Ok(Self {
            cx,
            cy,
            h,
            w,
            theta: wrap_angle(theta),
            score: None,
        })
    }

    /// Same as [`ObbBox::canonicalize`] but with the angle in degrees.
    pub fn from_degrees(cx: f64, cy: f64, a: f64, b: f64, theta_deg: f64) -> Result<Self> {
        Self::canonicalize(cx, cy, a, b, theta_deg.to_radians())
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        self.score = Some(score);
        Ok(self)
    }

    /// Re-applies the canonical form (keeps the score).
    pub fn recanonicalized(&self) -> Result<Self> {
        let mut b = Self::canonicalize(self.cx, self.cy, self.h, self.w, self.theta)?;
        b.score = self.score;
        Ok(b)
    }

    pub fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn area(&self) -> f64 {
        self.h * self.w
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Unit vector along the long side.
    pub fn long_axis(&self) -> Point {
        Point::new(self.theta.cos(), self.theta.sin())
    }

    /// Whether `p` lies inside or on the boundary of the box.
    pub fn contains(&self, p: Point) -> bool {
        let (s, c) = self.theta.sin_cos();
        let d = p - self.center();
        let along = d.x * c + d.y * s;
        let across = -d.x * s + d.y * c;
        along.abs() <= 0.5 * self.h && across.abs() <= 0.5 * self.w
    }

    /// Axis-aligned extent `(min, max)` of the box.
    pub fn aabb(&self) -> (Point, Point) {
        let (s, c) = self.theta.sin_cos();
        let ex = 0.5 * (self.h * c.abs() + self.w * s.abs());
        let ey = 0.5 * (self.h * s.abs() + self.w * c.abs());
        (
            Point::new(self.cx - ex, self.cy - ey),
            Point::new(self.cx + ex, self.cy + ey),
        )
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.cx
            .total_cmp(&other.cx)
            .then(self.cy.total_cmp(&other.cy))
            .then(self.h.total_cmp(&other.h))
            .then(self.w.total_cmp(&other.w))
            .then(self.theta.total_cmp(&other.theta))
    }
}

/// Free-function form of [`ObbBox::canonicalize`].
pub fn canonicalize_obb(cx: f64, cy: f64, a: f64, b: f64, theta_raw: f64) -> Result<ObbBox> {
    ObbBox::canonicalize(cx, cy, a, b, theta_raw)
}

/// Ordered vertex list. Non-empty polygons are counter-clockwise (positive
/// signed area in a y-up frame) with at least three vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Shoelace signed area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            acc += p.cross(q);
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Reverses vertex order if the polygon is clockwise.
    pub fn into_ccw(mut self) -> Self {
        if self.signed_area() < 0.0 {
            self.vertices.reverse();
        }
        self
    }
}

pub fn polygon_area(p: &Polygon) -> f64 {
    p.area()
}

/// Four counter-clockwise corners of the box.
pub fn obb_to_polygon(b: &ObbBox) -> Polygon {
    let (s, c) = b.theta.sin_cos();
    let u = Point::new(c, s) * (0.5 * b.h);
    let v = Point::new(-s, c) * (0.5 * b.w);
    let o = b.center();
    Polygon::new(vec![o + u - v, o + u + v, o - u + v, o - u - v])
}

/// Sutherland-Hodgman clipping of a convex `subject` by a convex `clip`.
///
/// Both polygons must be counter-clockwise. Points lying exactly on a clip
/// edge are kept, so `convex_clip(p, p)` returns `p` unchanged.
pub fn convex_clip(subject: &Polygon, clip: &Polygon) -> Polygon {
    if subject.is_empty() || clip.is_empty() {
        return Polygon::empty();
    }
    let mut output = subject.vertices.clone();
    let n = clip.vertices.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip.vertices[i];
        let edge = clip.vertices[(i + 1) % n] - a;
        let input = std::mem::take(&mut output);
        let side = |p: Point| edge.cross(p - a);
        let mut prev = *input.last().unwrap();
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, prev_side, cur, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, prev_side, cur, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
        output.dedup();
        while output.len() > 1 && output.first() == output.last() {
            output.pop();
        }
    }
    if output.len() < 3 {
        Polygon::empty()
    } else {
        Polygon::new(output)
    }
}

// Point where segment p->q crosses the clip line, given signed distances.
#[inline]
fn intersect(p: Point, dp: f64, q: Point, dq: f64) -> Point {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Exact rotated IoU via polygon intersection. Symmetric bit-for-bit.
pub fn obb_iou(a: &ObbBox, b: &ObbBox) -> f64 {
    // A fixed operand order keeps iou(a, b) == iou(b, a) exactly.
    let (a, b) = if a.total_cmp(b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    if (a.cx, a.cy, a.h, a.w, a.theta) == (b.cx, b.cy, b.h, b.w, b.theta) {
        // Clipping reorders vertices, which costs an ulp in the shoelace sum.
        return if a.area() > 0.0 { 1.0 } else { 0.0 };
    }
    let inter = convex_clip(&obb_to_polygon(a), &obb_to_polygon(b)).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Brute-force IoU: samples cell centres of a `resolution x resolution` grid
/// spanning the joint axis-aligned extent of both boxes and counts membership.
pub fn obb_iou_raster_oracle(a: &ObbBox, b: &ObbBox, resolution: usize) -> f64 {
    let resolution = resolution.max(1);
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    let x0 = amin.x.min(bmin.x);
    let y0 = amin.y.min(bmin.y);
    let dx = (amax.x.max(bmax.x) - x0) / resolution as f64;
    let dy = (amax.y.max(bmax.y) - y0) / resolution as f64;
    let (mut in_a, mut in_b, mut in_both) = (0u64, 0u64, 0u64);
    for row in 0..resolution {
        let y = y0 + (row as f64 + 0.5) * dy;
        for col in 0..resolution {
            let p = Point::new(x0 + (col as f64 + 0.5) * dx, y);
            let ia = a.contains(p);
            let ib = b.contains(p);
            in_a += ia as u64;
            in_b += ib as u64;
            in_both += (ia && ib) as u64;
        }
    }
    let union = in_a + in_b - in_both;
    if union == 0 {
        0.0
    } else {
        in_both as f64 / union as f64
    }
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no collinear
/// points. Degenerate inputs return fewer than three vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|p, q| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[inline]
fn turn(o: Point, a: Point, b: Point) -> f64 {
    (a - o).cross(b - o)
}
