//! Rotated Gaussian ship masks and the inverse path from a probability mask
//! back to oriented boxes (threshold, border following, minimum-area
//! rectangle).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, ObbBox, Point};
use crate::grid::Grid;

/// Smallest side length a recovered box may have, in pixels.
pub const MIN_SIDE: f64 = 1.0;

/// Which box side controls the spread along the long-axis direction
/// `(cos theta, sin theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisPairing {
    /// The formula as usually printed: the coordinate along the long-axis
    /// direction is scaled by the short side `w`, the across coordinate by `h`.
    /// At `theta = 0` the point `(x + w, y)` evaluates to `exp(-0.5)`.
    #[default]
    Literal,
    /// The spread follows the box: `h` along the long axis, `w` across it, so
    /// the mask is elongated the same way as the ship.
    LongAxis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussParams {
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub pairing: AxisPairing,
}

impl Default for GaussParams {
    fn default() -> Self {
        Self {
            lambda_w: 1.0,
            lambda_h: 1.0,
            pairing: AxisPairing::Literal,
        }
    }
}

impl GaussParams {
    /// Long-axis mask whose `tau` iso-contour is the ellipse inscribed in the
    /// box, i.e. `lambda = 8 ln(1 / tau)`. Thresholding such a mask at `tau`
    /// and taking the minimum-area rectangle recovers the box sides.
    pub fn inscribed(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let lambda = 8.0 * (1.0 / tau).ln();
        Ok(Self {
            lambda_w: lambda,
            lambda_h: lambda,
            pairing: AxisPairing::LongAxis,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_w > 0.0 && self.lambda_h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance factors must be positive, got ({}, {})",
                self.lambda_w, self.lambda_h
            )));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")))
    }
}

/// Mask value at an arbitrary (sub-pixel) location.
pub fn gaussian_value(b: &ObbBox, params: &GaussParams, x: f64, y: f64) -> f64 {
    let (s, c) = b.theta.sin_cos();
    let (dx, dy) = (x - b.cx, y - b.cy);
    // Rotate by -theta into the box frame.
    let along = c * dx + s * dy;
    let across = -s * dx + c * dy;
    let (along_side, across_side, along_lambda, across_lambda) = match params.pairing {
        AxisPairing::Literal => (b.w, b.h, params.lambda_w, params.lambda_h),
        AxisPairing::LongAxis => (b.h, b.w, params.lambda_h, params.lambda_w),
    };
    let e = along_lambda * along * along / (2.0 * along_side * along_side)
        + across_lambda * across * across / (2.0 * across_side * across_side);
    (-e).exp()
}

/// Rasterizes the rotated Gaussian confidence of `b` at integer pixel centres.
pub fn rotated_gaussian_mask(b: &ObbBox, width: usize, height: usize, params: &GaussParams) -> Result<Grid> {
    params.validate()?;
    if !(b.h > 0.0 && b.w > 0.0) {
        return Err(Error::InvalidBox(format!("sides {} x {}", b.h, b.w)));
    }
    Grid::from_fn(width, height, |x, y| gaussian_value(b, params, x as f64, y as f64))
}

/// 1 where `g >= tau`, else 0.
pub fn threshold_mask(g: &Grid, tau: f64) -> Grid {
    g.map(|v| if v >= tau { 1.0 } else { 0.0 })
}

/// An 8-connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// All member pixels as `(x, y)`, in flood-fill order.
    pub pixels: Vec<(usize, usize)>,
    /// Outer border in tracing order, starting at the component's first pixel
    /// in raster order. Pixels on one-pixel-wide parts appear more than once.
    pub contour: Vec<(usize, usize)>,
}

// Neighbour offsets, clockwise on screen (y grows downwards), starting east.
const DIRS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];
const WEST: usize = 4;

/// Labels 8-connected foreground components (value != 0) and follows each
/// one's outer border.
pub fn extract_components(b: &Grid) -> Vec<Component> {
    let (w, h) = (b.width(), b.height());
    let fg = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && b.get(x as usize, y as usize) != 0.0
    };
    let mut labelled = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if labelled[y * w + x] || b.get(x, y) == 0.0 {
                continue;
            }
            // First pixel of a component in raster order: its west neighbour
            // is background, which makes it an outer-border starting point.
            let mut pixels = Vec::new();
            labelled[y * w + x] = true;
            queue.push_back((x, y));
            while let Some((px, py)) = queue.pop_front() {
                pixels.push((px, py));
                for (dx, dy) in DIRS {
                    let (nx, ny) = (px as isize + dx, py as isize + dy);
                    if fg(nx, ny) {
                        let idx = ny as usize * w + nx as usize;
                        if !labelled[idx] {
                            labelled[idx] = true;
                            queue.push_back((nx as usize, ny as usize));
                        }
                    }
                }
            }
            let contour = follow_outer_border((x as isize, y as isize), &fg);
            out.push(Component { pixels, contour });
        }
    }
    out
}

fn direction_of(from: (isize, isize), to: (isize, isize)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    DIRS.iter().position(|&o| o == d).expect("pixels are 8-neighbours")
}

// Suzuki-Abe border following for an outer border whose start pixel has a
// background west neighbour.
fn follow_outer_border(start: (isize, isize), fg: &impl Fn(isize, isize) -> bool) -> Vec<(usize, usize)> {
    let at = |p: (isize, isize), k: usize| (p.0 + DIRS[k].0, p.1 + DIRS[k].1);
    let as_pixel = |p: (isize, isize)| (p.0 as usize, p.1 as usize);

    // Clockwise search from the west neighbour for the first foreground pixel.
    let first = (0..8)
        .map(|i| (WEST + i) % 8)
        .map(|k| at(start, k))
        .find(|&(x, y)| fg(x, y));
    let Some(first) = first else {
        return vec![as_pixel(start)];
    };

    let mut contour = Vec::new();
    let mut prev = first;
    let mut cur = start;
    loop {
        // Counter-clockwise search around `cur`, starting just after `prev`.
        let back = direction_of(cur, prev);
        let next = (1..=8)
            .map(|i| (back + 8 - i) % 8)
            .map(|k| at(cur, k))
            .find(|&(x, y)| fg(x, y))
            .expect("prev is always foreground");
        contour.push(as_pixel(cur));
        if next == start && cur == first {
            break;
        }
        prev = cur;
        cur = next;
    }
    contour
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
///
/// Sides shorter than [`MIN_SIDE`] (single points, collinear sets) are
/// floored to it.
pub fn min_area_rect(points: &[Point]) -> Result<ObbBox> {
    if points.is_empty() {
        return Err(Error::Empty("min_area_rect points"));
    }
    let hull = convex_hull(points);
    match hull.len() {
        1 => return ObbBox::canonicalize(hull[0].x, hull[0].y, MIN_SIDE, MIN_SIDE, 0.0),
        2 => {
            let d = hull[1] - hull[0];
            let mid = (hull[0] + hull[1]) * 0.5;
            let len = d.dot(d).sqrt().max(MIN_SIDE);
            return ObbBox::canonicalize(mid.x, mid.y, len, MIN_SIDE, d.y.atan2(d.x));
        }
        _ => {}
    }

    let n = hull.len();
    let p = |i: usize| hull[i % n];
    let (mut right, mut top, mut left) = (1usize, 1usize, 0usize);
    let mut best: Option<(f64, Point, f64, f64, f64)> = None;
    for i in 0..n {
        let edge = p(i + 1) - p(i);
        let e = edge * (1.0 / edge.dot(edge).sqrt());
        // Hull is counter-clockwise, so the left normal points inwards.
        let nrm = Point::new(-e.y, e.x);
        if i == 0 {
            right = i + 1;
            top = right;
        }
        right = right.max(i + 1);
        let mut steps = 0;
        while steps < n && p(right + 1).dot(e) > p(right).dot(e) {
            right += 1;
            steps += 1;
        }
        top = top.max(right);
        steps = 0;
        while steps < n && p(top + 1).dot(nrm) > p(top).dot(nrm) {
            top += 1;
            steps += 1;
        }
        if i == 0 {
            left = top;
        }
        left = left.max(top);
        steps = 0;
        while steps < n && p(left + 1).dot(e) < p(left).dot(e) {
            left += 1;
            steps += 1;
        }

        let base = p(i);
        let lo = (p(left) - base).dot(e);
        let hi = (p(right) - base).dot(e);
        let depth = (p(top) - base).dot(nrm);
        let along = hi - lo;
        let area = along * depth;
        if best.is_none_or(|b| area < b.0) {
            let centre = base + e * (0.5 * (lo + hi)) + nrm * (0.5 * depth);
            best = Some((area, centre, along, depth, e.y.atan2(e.x)));
        }
    }
    let (_, centre, along, depth, theta) = best.expect("hull has at least three vertices");
    ObbBox::canonicalize(
        centre.x,
        centre.y,
        along.max(MIN_SIDE),
        depth.max(MIN_SIDE),
        theta,
    )
}

/// Corners of the unit squares covered by `pixels` (centres at integer
/// coordinates), so a recovered rectangle spans whole pixels.
pub fn pixel_footprint(pixels: &[(usize, usize)]) -> Vec<Point> {
    let mut pts = Vec::with_capacity(4 * pixels.len());
    for &(x, y) in pixels {
        let (x, y) = (x as f64, y as f64);
        pts.extend([
            Point::new(x - 0.5, y - 0.5),
            Point::new(x + 0.5, y - 0.5),
            Point::new(x + 0.5, y + 0.5),
            Point::new(x - 0.5, y + 0.5),
        ]);
    }
    pts
}

/// Thresholds `p` at `tau`, extracts components of at least `min_area`
/// pixels and returns one rectangle per component, scored by the mean
/// probability over the component.
pub fn mask_to_obbs(p: &Grid, tau: f64, min_area: f64) -> Result<Vec<ObbBox>> {
    check_tau(tau)?;
    if !(min_area >= 0.0) {
        return Err(Error::InvalidArgument(format!("min_area {min_area} is negative")));
    }
    let binary = threshold_mask(p, tau);
    let mut boxes = Vec::new();
    for comp in extract_components(&binary) {
        if (comp.pixels.len() as f64) < min_area {
            continue;
        }
        let rect = min_area_rect(&pixel_footprint(&comp.contour))?;
        let mean = comp.pixels.iter().map(|&(x, y)| p.get(x, y)).sum::<f64>() / comp.pixels.len() as f64;
        boxes.push(rect.with_score(mean.clamp(0.0, 1.0))?);
    }
    Ok(boxes)
}
