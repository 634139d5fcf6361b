//! Synthetic city-block world. One geometry drives both the radio channel
//! and every sensor view, so sensing carries real information about the
//! channel.
//!
//! # Scene file schema (version 1, TOML)
//!
//! ```toml
//! version = 1
//!
//! [config]
//! extent_x = 190.0            # meters
//! extent_y = 135.0
//! bs_position = [95.0, 67.5, 9.0]
//! n_buildings = 12
//! footprint_min = 8.0         # building side length range, meters
//! footprint_max = 25.0
//! height_min = 6.0
//! height_max = 32.0
//! min_gap = 4.0               # street width kept between buildings
//! bs_clearance = 6.0          # keep-out radius around the BS footprint
//! rng_seed = 1
//! n_v = 16
//! n_h = 8
//! downlink_carrier_hz = 4.95e9
//! path_gain_ref_m = 10.0      # LoS gain is path_gain_ref_m / distance
//! reflection_coeff = 0.6
//!
//! [[buildings]]
//! min_corner = [10.0, 12.0, 0.0]
//! max_corner = [24.0, 30.0, 18.5]
//! ```

mod channel;
pub mod geometry;
mod sensors;

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{rng_for, tag};

pub use channel::{steering_vector, synthesize_channel, ChannelVector, PathInfo};
pub use geometry::{Aabb, Vec3};
pub use sensors::{
    in_gps_shadow, sample_detections, sample_gps, sample_lidar, CameraFace, CameraIntrinsics,
    Detection, DetectionSet, GpsReading, PointCloud, RayConfig, GPS_SHADOW_HEIGHT_M,
    GPS_SHADOW_RADIUS_M,
};

pub type Building = Aabb;

pub const SCENE_FILE_VERSION: u32 = 1;

/// Bounded rejection-sampling retries per building.
const MAX_PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub extent_x: f64,
    pub extent_y: f64,
    pub bs_position: Vec3,
    pub n_buildings: usize,
    pub footprint_min: f64,
    pub footprint_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub min_gap: f64,
    pub bs_clearance: f64,
    pub rng_seed: u64,
    pub n_v: usize,
    pub n_h: usize,
    pub downlink_carrier_hz: f64,
    pub path_gain_ref_m: f64,
    pub reflection_coeff: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent_x: 190.0,
            extent_y: 135.0,
            bs_position: [95.0, 67.5, 9.0],
            n_buildings: 12,
            footprint_min: 8.0,
            footprint_max: 25.0,
            height_min: 6.0,
            height_max: 32.0,
            min_gap: 4.0,
            bs_clearance: 6.0,
            rng_seed: 1,
            n_v: 16,
            n_h: 8,
            downlink_carrier_hz: 4.95e9,
            path_gain_ref_m: 10.0,
            reflection_coeff: 0.6,
        }
    }
}

impl SceneConfig {
    pub fn n_antennas(&self) -> usize {
        self.n_v * self.n_h
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.extent_x > 0.0 && self.extent_y > 0.0) {
            return bad("scene extents must be positive");
        }
        if self.n_v == 0 || self.n_h == 0 {
            return bad("antenna counts must be at least 1");
        }
        let [bx, by, bz] = self.bs_position;
        if !(bz > 0.0) {
            return bad("BS height must be positive");
        }
        if !(0.0..=self.extent_x).contains(&bx) || !(0.0..=self.extent_y).contains(&by) {
            return bad("BS must lie inside the scene extent");
        }
        if !(self.footprint_min > 0.0 && self.footprint_min <= self.footprint_max) {
            return bad("footprint range must be positive and ordered");
        }
        if self.n_buildings > 0
            && (self.footprint_max > self.extent_x || self.footprint_max > self.extent_y)
        {
            return bad("buildings do not fit inside the extent");
        }
        if !(self.height_min > 0.0 && self.height_min <= self.height_max) {
            return bad("height range must be positive and ordered");
        }
        if !(self.path_gain_ref_m > 0.0) || !(self.reflection_coeff >= 0.0) {
            return bad("path gain parameters must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub version: u32,
    pub config: SceneConfig,
    pub buildings: Vec<Building>,
}

impl Scene {
    pub fn bs_position(&self) -> Vec3 {
        self.config.bs_position
    }

    pub fn seed(&self) -> u64 {
        self.config.rng_seed
    }

    pub fn n_antennas(&self) -> usize {
        self.config.n_antennas()
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (0.0..=self.config.extent_x).contains(&x) && (0.0..=self.config.extent_y).contains(&y)
    }

    /// Whether the open segment `a → b` crosses any building.
    pub fn is_blocked(&self, a: Vec3, b: Vec3) -> bool {
        self.buildings.iter().any(|bld| bld.blocks_segment(a, b))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if scene.version != SCENE_FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported scene file version {}",
                scene.version
            )));
        }
        scene.config.validate()?;
        if let Some(b) = scene.buildings.iter().find(|b| !b.is_well_formed()) {
            return Err(Error::Format(format!("malformed building {b:?}")));
        }
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Places `n_buildings` disjoint boxes by rejection sampling. Boxes keep
/// `min_gap` of street between each other and stay clear of the BS.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng_for(&[tag::SCENE, cfg.rng_seed]);
    let [bx, by, _] = cfg.bs_position;
    let mut buildings: Vec<Building> = Vec::with_capacity(cfg.n_buildings);
    let mut attempts = 0;
    for _ in 0..cfg.n_buildings {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            attempts += 1;
            let w = rng.random_range(cfg.footprint_min..=cfg.footprint_max);
            let d = rng.random_range(cfg.footprint_min..=cfg.footprint_max);
            let h = rng.random_range(cfg.height_min..=cfg.height_max);
            let x0 = rng.random_range(0.0..=(cfg.extent_x - w));
            let y0 = rng.random_range(0.0..=(cfg.extent_y - d));
            let cand = Aabb::new([x0, y0, 0.0], [x0 + w, y0 + d, h]);
            if cand.contains_xy(bx, by, cfg.bs_clearance) {
                continue;
            }
            if buildings.iter().any(|b| b.overlaps_xy(&cand, cfg.min_gap)) {
                continue;
            }
            buildings.push(cand);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::SceneTooDense {
                placed: buildings.len(),
                requested: cfg.n_buildings,
                attempts,
            });
        }
    }
    Ok(Scene {
        version: SCENE_FILE_VERSION,
        config: cfg.clone(),
        buildings,
    })
}

/// Which optional sensors a vehicle carries. The pilot is always present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorMask {
    pub gps: bool,
    pub rgb: bool,
    pub lidar: bool,
}

impl SensorMask {
    pub const PILOT_ONLY: Self = Self {
        gps: false,
        rgb: false,
        lidar: false,
    };
    pub const ALL: Self = Self {
        gps: true,
        rgb: true,
        lidar: true,
    };

    pub fn bits(self) -> u8 {
        (self.gps as u8) | (self.rgb as u8) << 1 | (self.lidar as u8) << 2
    }

    pub fn from_bits(b: u8) -> Self {
        Self {
            gps: b & 1 != 0,
            rgb: b & 2 != 0,
            lidar: b & 4 != 0,
        }
    }
}

impl fmt::Display for SensorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("pilot")?;
        for (on, name) in [(self.gps, "gps"), (self.rgb, "rgb"), (self.lidar, "lidar")] {
            if on {
                write!(f, "+{name}")?;
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    /// Sensor/antenna reference point; z is the mounting height above ground.
    pub position: Vec3,
    pub velocity: [f64; 2],
    /// Heading in `[-π, π)`, measured from the +x axis.
    pub orientation: f64,
    pub sensors: SensorMask,
}

impl VehicleState {
    pub fn new(id: u32, position: Vec3, velocity: [f64; 2], orientation: f64, sensors: SensorMask) -> Self {
        Self {
            id,
            position,
            velocity,
            orientation: wrap_angle(orientation),
            sensors,
        }
    }
}
