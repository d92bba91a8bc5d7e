//! Ray–box, ray–triangle and ray–sphere tests.

use nalgebra::{Matrix4, Point3};

use crate::accel::Aabb;
use crate::scene::Ray;

/// A ray parameter range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub t_min: f64,
    pub t_max: f64,
}

impl Interval {
    /// The full forward ray, `(0, ∞)`.
    pub const FORWARD: Interval = Interval {
        t_min: 0.0,
        t_max: f64::INFINITY,
    };

    pub fn new(t_min: f64, t_max: f64) -> Self {
        debug_assert!(t_min < t_max, "empty interval ({t_min}, {t_max})");
        Interval { t_min, t_max }
    }

    /// `t_min < t <= t_max`.
    pub fn contains(&self, t: f64) -> bool {
        self.t_min < t && t <= self.t_max
    }
}

/// Relative widening of the slab exit so rounding never drops a box the
/// ray touches.
const SLAB_SLACK: f64 = 1.0 + 2.0 * 3.0 * f64::EPSILON;

/// Barycentric tolerance; shared edges are hit from both sides.
const BARY_EPS: f64 = 1e-9;

/// Where a box lies relative to `[t_min, t_max]` along the ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxSpan {
    Miss,
    /// Overlaps the interval; entry distance clamped to `t_min`.
    Hit(f64),
    /// Overlaps `[t_min, ∞)` but starts after `t_max`.
    Beyond(f64),
}

/// Slab test against the closed interval `[t_min, t_max]`.
pub fn classify_box(ray: &Ray, b: &Aabb, interval: Interval) -> BoxSpan {
    let mut t0 = interval.t_min;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        let inv = 1.0 / ray.direction[i];
        let mut near = (b.min[i] - ray.origin[i]) * inv;
        let mut far = (b.max[i] - ray.origin[i]) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        // NaN (origin on a slab plane of a parallel axis) leaves the bound as is.
        t0 = t0.max(near);
        t1 = t1.min(far * SLAB_SLACK);
    }
    if t0 > t1 {
        BoxSpan::Miss
    } else if t0 > interval.t_max {
        BoxSpan::Beyond(t0)
    } else {
        BoxSpan::Hit(t0)
    }
}

pub fn ray_aabb(ray: &Ray, b: &Aabb, interval: Interval) -> Option<f64> {
    match classify_box(ray, b, interval) {
        BoxSpan::Hit(t) => Some(t),
        _ => None,
    }
}

/// Möller–Trumbore. Returns `t` in `(t_min, t_max]`.
pub fn ray_triangle(ray: &Ray, v0: &Point3<f64>, v1: &Point3<f64>, v2: &Point3<f64>, interval: Interval) -> Option<f64> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm() * ray.direction.norm();
    if det.abs() <= 1e-12 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - v0;
    let u = s.dot(&p) * inv;
    if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    interval.contains(t).then_some(t)
}

/// Nearest root of `|o + t d| = 1` inside `(t_min, t_max]`.
pub fn ray_unit_sphere(ray: &Ray, interval: Interval) -> Option<f64> {
    let o = ray.origin.coords;
    let d = ray.direction;
    let a = d.norm_squared();
    let b = o.dot(&d);
    let c = o.norm_squared() - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    // Cancellation-free pair of roots.
    let q = -(b + disc.sqrt().copysign(b));
    let (r0, r1) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        let (x, y) = (q / a, c / q);
        (x.min(y), x.max(y))
    };
    [r0, r1].into_iter().find(|&t| interval.contains(t))
}

/// Affine origin, linear direction, no renormalization: `t` is preserved.
pub fn transform_ray(ray: &Ray, local_from_world: &Matrix4<f64>) -> Ray {
    Ray {
        origin: local_from_world.transform_point(&ray.origin),
        direction: local_from_world.transform_vector(&ray.direction),
    }
}
