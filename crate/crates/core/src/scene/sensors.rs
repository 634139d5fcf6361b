//! Sensor emulators: noisy GPS with building shadowing, a geometric
//! stand-in for the camera object detector, and a ray-cast LiDAR.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{add, dot, norm, scale, sub, Aabb, Vec3};
use super::{Scene, VehicleState};

/// Buildings taller than this can shadow GPS.
pub const GPS_SHADOW_HEIGHT_M: f64 = 20.0;
/// Horizontal distance from a tall building within which GPS drops out.
pub const GPS_SHADOW_RADIUS_M: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsReading {
    pub position: Vec3,
    pub available: bool,
}

pub fn in_gps_shadow(scene: &Scene, x: f64, y: f64) -> bool {
    scene
        .buildings
        .iter()
        .any(|b| b.height() > GPS_SHADOW_HEIGHT_M && b.distance_xy(x, y) <= GPS_SHADOW_RADIUS_M)
}

/// Adds zero-mean Gaussian noise to x and y. The reading is flagged
/// unavailable inside a building shadow; callers fall back to dead reckoning.
pub fn sample_gps<R: Rng + ?Sized>(
    vehicle: &VehicleState,
    scene: &Scene,
    noise_std: f64,
    rng: &mut R,
) -> GpsReading {
    assert!(noise_std >= 0.0, "GPS noise std must be non-negative");
    let [x, y, z] = vehicle.position;
    let (nx, ny) = if noise_std > 0.0 {
        let n = Normal::new(0.0, noise_std).expect("finite std");
        (n.sample(rng), n.sample(rng))
    } else {
        (0.0, 0.0)
    };
    GpsReading {
        position: [x + nx, y + ny, z],
        available: !in_gps_shadow(scene, x, y),
    }
}

/// Pinhole intrinsics with square pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    /// Principal point at the image center, given horizontal field of view.
    pub fn with_hfov(width: f64, height: f64, hfov: f64) -> Self {
        let f = 0.5 * width / (0.5 * hfov).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width,
            cy: 0.5 * height,
            width,
            height,
        }
    }

    pub fn hfov(&self) -> f64 {
        2.0 * (0.5 * self.width / self.fx).atan()
    }

    /// Row-major `K_in`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::with_hfov(640.0, 480.0, FRAC_PI_2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CameraFace {
    Front,
    Back,
    Left,
    Right,
}

impl CameraFace {
    pub const ALL: [CameraFace; 4] = [Self::Front, Self::Back, Self::Left, Self::Right];

    /// Mounting yaw relative to the vehicle heading (left is +90°).
    pub fn yaw_offset(self) -> f64 {
        match self {
            Self::Front => 0.0,
            Self::Left => FRAC_PI_2,
            Self::Back => PI,
            Self::Right => -FRAC_PI_2,
        }
    }
}

/// Normalized bounding box with objectness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
    pub s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub front: Vec<Detection>,
    pub back: Vec<Detection>,
    pub left: Vec<Detection>,
    pub right: Vec<Detection>,
}

impl DetectionSet {
    pub fn face(&self, f: CameraFace) -> &[Detection] {
        match f {
            CameraFace::Front => &self.front,
            CameraFace::Back => &self.back,
            CameraFace::Left => &self.left,
            CameraFace::Right => &self.right,
        }
    }

    pub fn face_mut(&mut self, f: CameraFace) -> &mut Vec<Detection> {
        match f {
            CameraFace::Front => &mut self.front,
            CameraFace::Back => &mut self.back,
            CameraFace::Left => &mut self.left,
            CameraFace::Right => &mut self.right,
        }
    }

    pub fn is_empty(&self) -> bool {
        CameraFace::ALL.iter().all(|&f| self.face(f).is_empty())
    }
}

/// Detector range; farther buildings are not reported.
const DETECTION_RANGE_M: f64 = 120.0;
/// Objectness multiplier when the line of sight to a building center is
/// cut by another building.
const OCCLUDED_FACTOR: f64 = 0.3;
const NEAR_PLANE_M: f64 = 0.1;

struct CameraPose {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
}

impl CameraPose {
    fn new(vehicle: &VehicleState, face: CameraFace) -> Self {
        let yaw = vehicle.orientation + face.yaw_offset();
        Self {
            origin: vehicle.position,
            forward: [yaw.cos(), yaw.sin(), 0.0],
            right: [yaw.sin(), -yaw.cos(), 0.0],
        }
    }

    /// Camera coordinates: x right, y down, z forward.
    fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.origin);
        [dot(d, self.right), -d[2], dot(d, self.forward)]
    }
}

/// Projects a building and returns its clipped image box plus the fraction
/// of the unclipped box area that lies inside the image.
fn project_box(b: &Aabb, pose: &CameraPose, k: &CameraIntrinsics) -> Option<([f64; 4], f64)> {
    let cam: Vec<Vec3> = b.corners().iter().map(|&c| pose.to_camera(c)).collect();
    let mut pts: Vec<Vec3> = cam.iter().copied().filter(|c| c[2] >= NEAR_PLANE_M).collect();
    for &(i, j) in &Aabb::EDGES {
        let (a, c) = (cam[i], cam[j]);
        if (a[2] - NEAR_PLANE_M) * (c[2] - NEAR_PLANE_M) < 0.0 {
            let t = (NEAR_PLANE_M - a[2]) / (c[2] - a[2]);
            pts.push(add(a, scale(sub(c, a), t)));
        }
    }
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &pts {
        let u = k.cx + k.fx * p[0] / p[2];
        let v = k.cy + k.fy * p[1] / p[2];
        x0 = x0.min(u);
        x1 = x1.max(u);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    let full = (x1 - x0) * (y1 - y0);
    let (cx0, cx1) = (x0.max(0.0), x1.min(k.width));
    let (cy0, cy1) = (y0.max(0.0), y1.min(k.height));
    if cx1 <= cx0 || cy1 <= cy0 || !(full > 0.0) {
        return None;
    }
    let frac = ((cx1 - cx0) * (cy1 - cy0) / full).clamp(0.0, 1.0);
    Some(([cx0, cy0, cx1, cy1], frac))
}

/// Emulates an object detector on the four vehicle cameras by projecting
/// building boxes through the pinhole model. Objectness is the visible
/// fraction of the box, reduced when another building occludes its center.
pub fn sample_detections(vehicle: &VehicleState, scene: &Scene, intrinsics: &CameraIntrinsics) -> DetectionSet {
    let mut out = DetectionSet::default();
    for face in CameraFace::ALL {
        let pose = CameraPose::new(vehicle, face);
        for (bi, b) in scene.buildings.iter().enumerate() {
            let c = b.center();
            if b.distance_xy(vehicle.position[0], vehicle.position[1]) > DETECTION_RANGE_M {
                continue;
            }
            let Some(([x0, y0, x1, y1], frac)) = project_box(b, &pose, intrinsics) else {
                continue;
            };
            let target = [c[0], c[1], (0.5 * b.height()).min(vehicle.position[2].max(0.5))];
            let occluded = scene
                .buildings
                .iter()
                .enumerate()
                .any(|(j, o)| j != bi && o.blocks_segment(vehicle.position, target));
            let s = if occluded { frac * OCCLUDED_FACTOR } else { frac };
            out.face_mut(face).push(Detection {
                u: 0.5 * (x0 + x1) / intrinsics.width,
                v: 0.5 * (y0 + y1) / intrinsics.height,
                w: (x1 - x0) / intrinsics.width,
                h: (y1 - y0) / intrinsics.height,
                s,
            });
        }
    }
    out
}

/// Fixed angular scan pattern. Azimuths are relative to the vehicle heading
/// and cover a full turn starting at -π; elevations span
/// `[elevation_min, elevation_max]` (a single step uses `elevation_min`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayConfig {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 72,
            n_elevation: 8,
            elevation_min: -0.25,
            elevation_max: 0.35,
            max_range: 60.0,
        }
    }
}

impl RayConfig {
    pub fn ray_budget(&self) -> usize {
        self.n_azimuth * self.n_elevation
    }

    pub fn azimuths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_azimuth).map(move |i| -PI + 2.0 * PI * i as f64 / self.n_azimuth as f64)
    }

    pub fn elevations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_elevation).map(move |i| {
            if self.n_elevation == 1 {
                self.elevation_min
            } else {
                self.elevation_min
                    + (self.elevation_max - self.elevation_min) * i as f64 / (self.n_elevation - 1) as f64
            }
        })
    }
}

/// Points in the vehicle frame: x forward, y left, z up, origin at the
/// sensor mount.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

pub fn sample_lidar(vehicle: &VehicleState, scene: &Scene, rays: &RayConfig) -> PointCloud {
    assert!(
        rays.n_azimuth >= 1 && rays.n_elevation >= 1 && rays.max_range > 0.0,
        "degenerate ray configuration"
    );
    let o = vehicle.position;
    let (sb, cb) = vehicle.orientation.sin_cos();
    let mut points = Vec::new();
    for el in rays.elevations() {
        for az in rays.azimuths() {
            let yaw = vehicle.orientation + az;
            let dir = [el.cos() * yaw.cos(), el.cos() * yaw.sin(), el.sin()];
            let mut best = f64::INFINITY;
            if dir[2] < 0.0 {
                best = -o[2] / dir[2];
            }
            for b in &scene.buildings {
                if let Some(t) = b.ray_hit(o, dir) {
                    best = best.min(t);
                }
            }
            if best <= rays.max_range {
                let w = scale(dir, best);
                points.push([w[0] * cb + w[1] * sb, -w[0] * sb + w[1] * cb, w[2]]);
            }
        }
    }
    debug_assert!(points.len() <= rays.ray_budget());
    debug_assert!(points.iter().all(|p| norm(*p).is_finite()));
    PointCloud { points }
}
