//! Planar geometry shared by the simulator, sensor model and masking.

use serde::{Deserialize, Serialize};

/// World-frame pose. Heading in radians, counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { x, y, heading }
    }

    /// Maps a point from this pose's local frame into the world frame.
    #[inline]
    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    /// Maps a world point into this pose's local frame.
    #[inline]
    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Ego motion between consecutive frames, expressed in the earlier ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub const fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        PoseDelta { dx, dy, dtheta }
    }

    /// Motion from `prev` to `next`, both world-frame poses.
    pub fn between(prev: &Pose, next: &Pose) -> Self {
        let (dx, dy) = prev.to_local(next.x, next.y);
        PoseDelta { dx, dy, dtheta: wrap_angle(next.heading - prev.heading) }
    }

    /// `self` followed by `then` (where `then` is expressed in the frame
    /// reached after `self`).
    pub fn compose(&self, then: &PoseDelta) -> PoseDelta {
        let (s, c) = self.dtheta.sin_cos();
        PoseDelta {
            dx: self.dx + c * then.dx - s * then.dy,
            dy: self.dy + s * then.dx + c * then.dy,
            dtheta: self.dtheta + then.dtheta,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dtheta.is_finite()
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut r = a.rem_euclid(tau);
    if r > std::f64::consts::PI {
        r -= tau;
    }
    r
}

/// Distance along a ray `origin + t * dir` (unit `dir`) to segment `a`–`b`.
pub fn ray_segment(origin: (f64, f64), dir: (f64, f64), a: (f64, f64), b: (f64, f64)) -> Option<f64> {
    let e = (b.0 - a.0, b.1 - a.1);
    let denom = cross(dir, e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = (a.0 - origin.0, a.1 - origin.1);
    let t = cross(w, e) / denom;
    let u = cross(w, dir) / denom;
    if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[inline]
fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Distance from a point to segment `a`–`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let e = (b.0 - a.0, b.1 - a.1);
    let len2 = e.0 * e.0 + e.1 * e.1;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * e.0 + (p.1 - a.1) * e.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = (a.0 + t * e.0, a.1 + t * e.1);
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

/// Corners of an oriented rectangle, counter-clockwise.
pub fn rect_corners(cx: f64, cy: f64, heading: f64, length: f64, width: f64) -> [(f64, f64); 4] {
    let pose = Pose::new(cx, cy, heading);
    let (hl, hw) = (length / 2.0, width / 2.0);
    [
        pose.to_world(hl, hw),
        pose.to_world(-hl, hw),
        pose.to_world(-hl, -hw),
        pose.to_world(hl, -hw),
    ]
}

/// Boundary-inclusive point-in-oriented-rectangle test with slack `tol`.
pub fn point_in_rect(p: (f64, f64), cx: f64, cy: f64, heading: f64, length: f64, width: f64, tol: f64) -> bool {
    let (lx, ly) = Pose::new(cx, cy, heading).to_local(p.0, p.1);
    lx.abs() <= length / 2.0 + tol && ly.abs() <= width / 2.0 + tol
}

/// Whether a convex polygon (any winding) contains `p`, boundary inclusive.
pub fn point_in_convex(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = cross((b.0 - a.0, b.1 - a.1), (p.0 - a.0, p.1 - a.1));
        if c.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

/// Strict convexity check for simple polygons with at least three vertices.
pub fn is_convex(poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let z = cross((b.0 - a.0, b.1 - a.1), (c.0 - b.0, c.1 - b.1));
        if z.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = z.signum();
        } else if z.signum() != sign {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_round_trip() {
        let p = Pose::new(3.0, -2.0, 0.7);
        let (wx, wy) = p.to_world(1.5, 0.25);
        let (lx, ly) = p.to_local(wx, wy);
        assert!((lx - 1.5).abs() < 1e-12 && (ly - 0.25).abs() < 1e-12);
    }

    #[test]
    fn delta_composition_matches_poses() {
        let a = Pose::new(1.0, 2.0, 0.3);
        let b = Pose::new(2.5, 2.4, 0.5);
        let c = Pose::new(3.1, 3.9, -0.2);
        let ab = PoseDelta::between(&a, &b);
        let bc = PoseDelta::between(&b, &c);
        let ac = PoseDelta::between(&a, &c);
        let comp = ab.compose(&bc);
        assert!((comp.dx - ac.dx).abs() < 1e-12);
        assert!((comp.dy - ac.dy).abs() < 1e-12);
        assert!((wrap_angle(comp.dtheta) - ac.dtheta).abs() < 1e-12);
    }

    #[test]
    fn ray_hits_wall() {
        let t = ray_segment((0.0, 0.0), (1.0, 0.0), (5.0, -1.0), (5.0, 1.0)).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert!(ray_segment((0.0, 0.0), (-1.0, 0.0), (5.0, -1.0), (5.0, 1.0)).is_none());
    }

    #[test]
    fn rect_membership() {
        assert!(point_in_rect((1.0, 0.5), 0.0, 0.0, 0.0, 2.0, 1.0, 0.0));
        assert!(!point_in_rect((1.01, 0.0), 0.0, 0.0, 0.0, 2.0, 1.0, 0.0));
        let corners = rect_corners(0.0, 0.0, 0.4, 4.0, 2.0);
        assert!(is_convex(&corners));
        assert!(point_in_convex((0.1, 0.1), &corners));
    }
}
