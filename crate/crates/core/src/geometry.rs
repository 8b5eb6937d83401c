//! SE(2) poses, angle arithmetic, rays, polygons, and grid indexing shared by
//! all other modules.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::maps::{CellState, OccupancyGridMap};

/// Wrap an angle into `[-pi, pi)`.
///
/// Uses `atan2(sin phi, cos phi)`, with the boundary value `+pi` mapped to
/// `-pi` so the half-open interval holds exactly.
pub fn wrap_angle(phi: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "wrap_angle: non-finite angle {phi}"
        )));
    }
    Ok(wrap_finite(phi))
}

/// Infallible wrap for values already known to be finite.
///
/// Exact identity on values already in range, so wrapped angles survive
/// serialization round trips bit-for-bit.
#[inline]
pub(crate) fn wrap_finite(phi: f64) -> f64 {
    debug_assert!(phi.is_finite());
    if (-PI..PI).contains(&phi) {
        return phi;
    }
    let w = phi.sin().atan2(phi.cos());
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// A 2D point or vector in meters, world frame unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn add(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x + other.x, self.y + other.y)
    }

    #[inline]
    pub fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }

    #[inline]
    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2D cross product (z component of the 3D cross).
    #[inline]
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// An SE(2) pose: position in meters, heading in radians.
///
/// `theta` is always stored wrapped into `[-pi, pi)`; construction validates
/// finiteness, so a `Pose2D` value is valid by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose2D {
    x: f64,
    y: f64,
    theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Pose2D: non-finite position ({x}, {y})"
            )));
        }
        Ok(Pose2D {
            x,
            y,
            theta: wrap_angle(theta)?,
        })
    }

    /// Construction from values already validated finite.
    #[inline]
    pub(crate) fn new_unchecked(x: f64, y: f64, theta: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite());
        Pose2D {
            x,
            y,
            theta: wrap_finite(theta),
        }
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Rigid-body composition `self ∘ other`: `other` interpreted in `self`'s
    /// frame, result in the world frame.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new_unchecked(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }
}

impl TryFrom<[f64; 3]> for Pose2D {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Pose2D::new(v[0], v[1], v[2])
    }
}

impl From<Pose2D> for [f64; 3] {
    fn from(p: Pose2D) -> [f64; 3] {
        [p.x, p.y, p.theta]
    }
}

/// A ray with unit direction and a finite maximum range in meters.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    origin: Vec2,
    direction: Vec2,
    max_range: f64,
}

impl Ray {
    pub fn new(origin: Vec2, direction: Vec2, max_range: f64) -> Result<Self> {
        if !origin.is_finite() || !direction.is_finite() {
            return Err(Error::InvalidArgument("Ray: non-finite input".into()));
        }
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "Ray: direction not unit length (|d| = {})",
                direction.norm()
            )));
        }
        if !(max_range > 0.0) || !max_range.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Ray: max_range must be positive and finite, got {max_range}"
            )));
        }
        Ok(Ray {
            origin,
            direction,
            max_range,
        })
    }

    /// Ray from an origin and a heading angle; the direction is normalized by
    /// construction.
    pub fn from_angle(origin: Vec2, angle: f64, max_range: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Ray::new(origin, Vec2::new(c, s), max_range)
    }

    #[inline]
    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    #[inline]
    pub fn direction(&self) -> Vec2 {
        self.direction
    }

    #[inline]
    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> Vec2 {
        self.origin.add(self.direction.scale(t))
    }
}

/// A simple polygon with non-zero area, implicitly closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Validation(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("polygon has non-finite vertex".into()));
        }
        let poly = Polygon { vertices };
        if poly.area().abs() < 1e-12 {
            return Err(Error::Validation("polygon has zero area".into()));
        }
        if !poly.is_simple() {
            return Err(Error::Validation("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle helper.
    pub fn rect(min: Vec2, max: Vec2) -> Result<Self> {
        Polygon::new(vec![
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed area via the shoelace formula.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut area = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            area += a.cross(b);
        }
        area / 2.0
    }

    /// Even-odd point containment test; boundary points may land either way.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[j];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn aabb(&self) -> (Vec2, Vec2) {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }

    pub fn translated(&self, offset: Vec2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| v.add(offset)).collect(),
        }
    }

    pub fn rotated_about(&self, center: Vec2, angle: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|v| center.add(v.sub(center).rotate(angle)))
                .collect(),
        }
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if a1.sub(a2).norm() < 1e-12 {
                return false; // duplicate consecutive vertices
            }
            for j in (i + 1)..n {
                // Skip adjacent edges (they share a vertex by construction).
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_properly_intersect(a1, a2, b1, b2) {
                    return false;
                }
            }
        }
        true
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Polygon::new(v.into_iter().map(|p| Vec2::new(p[0], p[1])).collect())
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Vec<[f64; 2]> {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

/// Strict crossing test used for the simplicity check: endpoint touches do
/// not count.
fn segments_properly_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = b2.sub(b1).cross(a1.sub(b1));
    let d2 = b2.sub(b1).cross(a2.sub(b1));
    let d3 = a2.sub(a1).cross(b1.sub(a1));
    let d4 = a2.sub(a1).cross(b2.sub(a1));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Parametric ray-segment intersection: returns the ray parameter `t >= 0`
/// where the ray crosses segment `[a, b]`, if any.
#[inline]
pub(crate) fn ray_segment_t(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let seg = b.sub(a);
    let denom = dir.cross(seg);
    if denom.abs() < 1e-15 {
        return None; // parallel
    }
    let rel = a.sub(origin);
    let t = rel.cross(seg) / denom;
    let u = rel.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Smallest `t` in `[0, max_range]` at which the ray meets the polygon
/// boundary; `t = 0` if the ray origin lies inside the polygon; `None` if the
/// polygon is not reached within range.
pub fn ray_polygon_hit(ray: &Ray, poly: &Polygon) -> Option<f64> {
    if poly.contains(ray.origin()) {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    for (a, b) in poly.edges() {
        if let Some(t) = ray_segment_t(ray.origin(), ray.direction(), a, b) {
            if t <= ray.max_range() && best.map_or(true, |bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Grid cell address, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl GridIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        GridIndex { row, col }
    }
}

/// Distance along the ray to the first occupied cell, measured to that
/// cell's center, or `max_range` if none is hit.
///
/// Traversal steps uniformly at half the grid resolution, so results carry a
/// one-cell tolerance. An occupied origin cell reports 0 immediately.
pub fn cast_ray_occupancy(ray: &Ray, grid: &OccupancyGridMap) -> Result<f64> {
    let origin_cell = grid.world_to_cell(ray.origin()).ok_or_else(|| {
        Error::OutOfBounds(format!(
            "ray origin ({}, {}) outside grid",
            ray.origin().x,
            ray.origin().y
        ))
    })?;
    if grid.state(origin_cell) == CellState::Occupied {
        return Ok(0.0);
    }

    let step = grid.resolution() / 2.0;
    let mut t = step;
    while t <= ray.max_range() {
        let p = ray.point_at(t);
        match grid.world_to_cell(p) {
            Some(idx) => {
                if grid.state(idx) == CellState::Occupied {
                    let d = grid.cell_center(idx).sub(ray.origin()).norm();
                    return Ok(d.min(ray.max_range()));
                }
            }
            // The grid is convex, so a ray that has left it never re-enters.
            None => return Ok(ray.max_range()),
        }
        t += step;
    }
    Ok(ray.max_range())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn square(min_x: f64, max_x: f64, min_y: f64, max_y: f64) -> Polygon {
        Polygon::rect(Vec2::new(min_x, min_y), Vec2::new(max_x, max_y)).unwrap()
    }

    #[test]
    fn wrap_angle_identity() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
    }

    #[test]
    fn wrap_angle_period_shift() {
        assert_relative_eq!(
            wrap_angle(3.0 * PI / 2.0).unwrap(),
            -PI / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn wrap_angle_six_radians() {
        // Oracle: arctan2(sin 6, cos 6) = 6 - 2*pi.
        let expected = 6.0_f64.sin().atan2(6.0_f64.cos());
        assert_relative_eq!(expected, 6.0 - 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(6.0).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(6.0).unwrap(), -0.28319, epsilon = 1e-5);
    }

    #[test]
    fn wrap_angle_pi_maps_to_negative_pi() {
        assert_eq!(wrap_angle(PI).unwrap(), -PI);
        assert!(wrap_angle(PI).unwrap() < PI);
    }

    #[test]
    fn wrap_angle_rejects_non_finite() {
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn pose_wraps_theta_on_construction() {
        let p = Pose2D::new(1.0, 2.0, 3.0 * PI).unwrap();
        assert!((-PI..PI).contains(&p.theta()));
        // Circular equivalence to the input angle.
        let circular_gap = (p.theta() - 3.0 * PI).rem_euclid(2.0 * PI).min(
            (3.0 * PI - p.theta()).rem_euclid(2.0 * PI),
        );
        assert!(circular_gap < 1e-9, "gap {circular_gap}");
    }

    #[test]
    fn pose_rejects_non_finite() {
        assert!(Pose2D::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn ray_requires_unit_direction() {
        assert!(Ray::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), 1.0).is_err());
        assert!(Ray::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn polygon_rejects_degenerate() {
        assert!(Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
        // zero area: collinear points
        assert!(Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0)
        ])
        .is_err());
        // bowtie
        assert!(Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0)
        ])
        .is_err());
    }

    #[test]
    fn ray_hits_axis_aligned_square() {
        let ray = Ray::from_angle(Vec2::new(0.0, 0.0), 0.0, 10.0).unwrap();
        let poly = square(1.0, 2.0, -0.5, 0.5);
        assert_relative_eq!(ray_polygon_hit(&ray, &poly).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_misses_square_behind() {
        let ray = Ray::from_angle(Vec2::new(0.0, 0.0), PI, 10.0).unwrap();
        let poly = square(1.0, 2.0, -0.5, 0.5);
        assert!(ray_polygon_hit(&ray, &poly).is_none());
    }

    #[test]
    fn ray_origin_inside_hits_at_zero() {
        let ray = Ray::from_angle(Vec2::new(1.5, 0.0), 0.3, 10.0).unwrap();
        let poly = square(1.0, 2.0, -0.5, 0.5);
        assert_eq!(ray_polygon_hit(&ray, &poly), Some(0.0));
    }

    #[test]
    fn ray_beyond_max_range_misses() {
        let ray = Ray::from_angle(Vec2::new(0.0, 0.0), 0.0, 0.5).unwrap();
        let poly = square(1.0, 2.0, -0.5, 0.5);
        assert!(ray_polygon_hit(&ray, &poly).is_none());
    }

    /// Independent oracle: intersect the ray against every edge segment with
    /// a straight 2x2 linear solve, no shared code with the implementation.
    fn ray_polygon_oracle(ray: &Ray, poly: &Polygon) -> Option<f64> {
        if poly.contains(ray.origin()) {
            return Some(0.0);
        }
        let mut best: Option<f64> = None;
        let verts = poly.vertices();
        let n = verts.len();
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            // origin + t*d = a + u*(b - a)  =>  [d, a-b] [t, u]^T = a - origin
            let m00 = ray.direction().x;
            let m01 = a.x - b.x;
            let m10 = ray.direction().y;
            let m11 = a.y - b.y;
            let det = m00 * m11 - m01 * m10;
            if det.abs() < 1e-15 {
                continue;
            }
            let rx = a.x - ray.origin().x;
            let ry = a.y - ray.origin().y;
            let t = (rx * m11 - m01 * ry) / det;
            let u = (m00 * ry - rx * m10) / det;
            if t >= 0.0 && t <= ray.max_range() && (0.0..=1.0).contains(&u) {
                best = Some(best.map_or(t, |bt: f64| bt.min(t)));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn wrap_is_periodic(phi in -20.0f64..20.0, k in -3i32..=3) {
            let shifted = phi + 2.0 * PI * k as f64;
            let a = wrap_angle(phi).unwrap();
            let b = wrap_angle(shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "wrap({phi}) = {a}, wrap({shifted}) = {b}");
        }

        #[test]
        fn wrap_stays_in_interval(phi in -50.0f64..50.0) {
            let w = wrap_angle(phi).unwrap();
            prop_assert!((-PI..PI).contains(&w));
        }

        #[test]
        fn ray_polygon_matches_oracle(
            ox in -3.0f64..3.0, oy in -3.0f64..3.0, angle in -PI..PI,
            cx in -2.0f64..2.0, cy in -2.0f64..2.0,
            w in 0.2f64..2.0, h in 0.2f64..2.0,
        ) {
            let ray = Ray::from_angle(Vec2::new(ox, oy), angle, 8.0).unwrap();
            let poly = square(cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0);
            let got = ray_polygon_hit(&ray, &poly);
            let want = ray_polygon_oracle(&ray, &poly);
            match (got, want) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                _ => prop_assert!(false, "mismatch: {got:?} vs {want:?}"),
            }
        }

        #[test]
        fn ray_polygon_translation_invariant(
            ox in -2.0f64..2.0, oy in -2.0f64..2.0, angle in -PI..PI,
            dx in -5.0f64..5.0, dy in -5.0f64..5.0,
        ) {
            let poly = square(0.5, 1.5, -0.7, 0.4);
            let ray = Ray::from_angle(Vec2::new(ox, oy), angle, 8.0).unwrap();
            let moved_ray = Ray::from_angle(Vec2::new(ox + dx, oy + dy), angle, 8.0).unwrap();
            let moved_poly = poly.translated(Vec2::new(dx, dy));
            let a = ray_polygon_hit(&ray, &poly);
            let b = ray_polygon_hit(&moved_ray, &moved_poly);
            match (a, b) {
                (None, None) => {}
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                _ => prop_assert!(false, "translation changed hit: {a:?} vs {b:?}"),
            }
        }
    }
}
