//! Axis-aligned boxes, segments and rays in world coordinates (meters,
//! z up, ground at z = 0).

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Departure angles from `from` towards `to`: azimuth in the x–y plane
/// (quadrant aware) and the angle measured from the downward vertical.
pub fn departure_angles(from: Vec3, to: Vec3) -> (f64, f64) {
    let d = sub(to, from);
    let azimuth = d[1].atan2(d[0]);
    let r = norm(d);
    let elevation = ((from[2] - to[2]) / r).clamp(-1.0, 1.0).acos();
    (azimuth, elevation)
}

/// Axis-aligned box; also the representation of a building.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
}

/// Shrink applied before occlusion tests so that grazing a face, or
/// starting on one (reflection points), does not count as a hit.
const SURFACE_EPS: f64 = 1e-7;

impl Aabb {
    pub fn new(min_corner: Vec3, max_corner: Vec3) -> Self {
        Self {
            min_corner,
            max_corner,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        (0..3).all(|i| self.min_corner[i] < self.max_corner[i])
    }

    pub fn center(&self) -> Vec3 {
        scale(add(self.min_corner, self.max_corner), 0.5)
    }

    pub fn height(&self) -> f64 {
        self.max_corner[2]
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min_corner, self.max_corner);
        [
            [a[0], a[1], a[2]],
            [b[0], a[1], a[2]],
            [a[0], b[1], a[2]],
            [b[0], b[1], a[2]],
            [a[0], a[1], b[2]],
            [b[0], a[1], b[2]],
            [a[0], b[1], b[2]],
            [b[0], b[1], b[2]],
        ]
    }

    /// Index pairs into [`Aabb::corners`] forming the 12 edges.
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min_corner[i] && p[i] <= self.max_corner[i])
    }

    pub fn contains_xy(&self, x: f64, y: f64, margin: f64) -> bool {
        x >= self.min_corner[0] - margin
            && x <= self.max_corner[0] + margin
            && y >= self.min_corner[1] - margin
            && y <= self.max_corner[1] + margin
    }

    /// Footprints overlap (closed boxes) when expanded by `margin`.
    pub fn overlaps_xy(&self, other: &Aabb, margin: f64) -> bool {
        self.min_corner[0] - margin <= other.max_corner[0]
            && other.min_corner[0] <= self.max_corner[0] + margin
            && self.min_corner[1] - margin <= other.max_corner[1]
            && other.min_corner[1] <= self.max_corner[1] + margin
    }

    /// Horizontal distance from a point to the footprint (0 inside).
    pub fn distance_xy(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min_corner[0] - x).max(0.0).max(x - self.max_corner[0]);
        let dy = (self.min_corner[1] - y).max(0.0).max(y - self.max_corner[1]);
        dx.hypot(dy)
    }

    /// Slab test: parameter interval `[t_enter, t_exit]` of the line
    /// `origin + t·dir` inside the box, if any.
    fn slab(&self, origin: Vec3, dir: Vec3, shrink: f64) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let lo = self.min_corner[i] + shrink;
            let hi = self.max_corner[i] - shrink;
            if dir[i].abs() < 1e-15 {
                if origin[i] < lo || origin[i] > hi {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[i];
                let (a, b) = ((lo - origin[i]) * inv, (hi - origin[i]) * inv);
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// Whether the open segment `a → b` passes through the box interior.
    pub fn blocks_segment(&self, a: Vec3, b: Vec3) -> bool {
        match self.slab(a, sub(b, a), SURFACE_EPS) {
            Some((t0, t1)) => t1 > 0.0 && t0 < 1.0,
            None => false,
        }
    }

    /// Distance along the ray to the first hit with the (closed) box
    /// surface, for rays starting outside the box.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (t0, t1) = self.slab(origin, dir, 0.0)?;
        if t1 < 0.0 {
            None
        } else if t0 >= 0.0 {
            Some(t0)
        } else {
            // Origin inside the box.
            Some(0.0)
        }
    }
}
