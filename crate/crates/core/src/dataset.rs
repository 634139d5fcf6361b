//! Training samples drawn from one scene: per sample, every vehicle gets a
//! random pose, its ground-truth channel and all sensor features.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airlink::{downlink_train, make_pilots, noise_var_from_snr, PilotMatrix};
use crate::error::{Error, Result};
use crate::preprocess::{
    dead_reckon, gps_feature, lidar_to_bev, rgb_feature, BevGrid, PilotFeature, SensingBundle,
};
use crate::scene::{
    sample_detections, sample_gps, sample_lidar, synthesize_channel, CameraIntrinsics, RayConfig, Scene,
    SensorMask, VehicleState,
};
use crate::seeding::{rng_for, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Vehicles per sample.
    pub k: usize,
    pub l_p: usize,
    pub snr_db: f64,
    pub power: f64,
    pub gps_noise_std: f64,
    /// Time since the last GPS fix when dead reckoning, seconds.
    pub dead_reckon_dt: f64,
    pub max_speed: f64,
    /// Vehicles keep at least this horizontal distance from the BS.
    pub min_bs_distance: f64,
    /// And this much clearance from building walls.
    pub wall_clearance: f64,
    pub bev: BevGrid,
    pub rays: RayConfig,
    pub camera: CameraIntrinsics,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            k: 3,
            l_p: 8,
            snr_db: 30.0,
            power: 1.0,
            gps_noise_std: 5.0,
            dead_reckon_dt: 1.0,
            max_speed: 15.0,
            min_bs_distance: 10.0,
            wall_clearance: 1.0,
            bev: BevGrid::default(),
            rays: RayConfig::default(),
            camera: CameraIntrinsics::default(),
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn noise_var(&self) -> f64 {
        noise_var_from_snr(self.snr_db, self.power)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l_p == 0 {
            return Err(Error::InvalidConfig("need K ≥ 1 and L_P ≥ 1".into()));
        }
        if !(self.power > 0.0) || !self.snr_db.is_finite() {
            return Err(Error::InvalidConfig("power must be positive and SNR finite".into()));
        }
        if self.gps_noise_std < 0.0 || self.dead_reckon_dt < 0.0 || self.max_speed < 0.0 {
            return Err(Error::InvalidConfig("noise, dt and speed must be non-negative".into()));
        }
        self.bev.validate()
    }
}

/// One vehicle within one sample. `bundle` carries every modality; masks
/// are applied when a scheme selects what a vehicle may use.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleSample {
    pub state: VehicleState,
    pub channel: Vec<Complex<f64>>,
    pub has_los: bool,
    pub gps_available: bool,
    pub bundle: SensingBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub vehicles: Vec<VehicleSample>,
}

impl Sample {
    pub fn channels(&self, ids: &[usize]) -> Vec<Vec<Complex<f64>>> {
        ids.iter().map(|&k| self.vehicles[k].channel.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub scene: Scene,
    pub config: DatasetConfig,
    pub pilots: PilotMatrix<f64>,
    pub samples: Vec<Sample>,
}

/// Keeps only the modalities in `mask`; the pilot is always kept.
pub fn mask_bundle(bundle: &SensingBundle, mask: SensorMask) -> SensingBundle {
    SensingBundle {
        gps: if mask.gps { bundle.gps.clone() } else { None },
        rgb: if mask.rgb { bundle.rgb.clone() } else { None },
        lidar: if mask.lidar { bundle.lidar.clone() } else { None },
        pilot: bundle.pilot.clone(),
    }
}

/// Uniform pose on free ground, away from the BS and building walls.
fn place_vehicle<R: Rng + ?Sized>(scene: &Scene, cfg: &DatasetConfig, id: u32, rng: &mut R) -> Result<VehicleState> {
    let sc = &scene.config;
    let bs = scene.bs_position();
    for _ in 0..10_000 {
        let x = rng.random_range(0.0..sc.extent_x);
        let y = rng.random_range(0.0..sc.extent_y);
        if (x - bs[0]).hypot(y - bs[1]) < cfg.min_bs_distance {
            continue;
        }
        if scene.buildings.iter().any(|b| b.contains_xy(x, y, cfg.wall_clearance)) {
            continue;
        }
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let speed = rng.random_range(0.0..=cfg.max_speed);
        return Ok(VehicleState::new(
            id,
            [x, y, 1.5],
            [speed * heading.cos(), speed * heading.sin()],
            heading,
            SensorMask::ALL,
        ));
    }
    Err(Error::DegenerateGeometry("no free ground to place a vehicle".into()))
}

fn vehicle_sample(
    scene: &Scene,
    cfg: &DatasetConfig,
    pilots: &PilotMatrix<f64>,
    sample_idx: u64,
    id: u32,
) -> Result<VehicleSample> {
    let key = [cfg.seed, sample_idx, id as u64];
    let mut rng = rng_for(&[tag::VEHICLE, key[0], key[1], key[2]]);
    let state = place_vehicle(scene, cfg, id, &mut rng)?;
    let ch = synthesize_channel(scene, &state);

    let mut noise_rng = rng_for(&[tag::PILOT_NOISE, key[0], key[1], key[2]]);
    let y = downlink_train(&ch.h, pilots, cfg.noise_var(), &mut noise_rng);

    let mut gps_rng = rng_for(&[tag::GPS, key[0], key[1], key[2]]);
    let fix = sample_gps(&state, scene, cfg.gps_noise_std, &mut gps_rng);
    let position = if fix.available {
        fix.position
    } else {
        // Last fix taken `dt` earlier along the current velocity.
        let dt = cfg.dead_reckon_dt;
        let past = VehicleState {
            position: [
                state.position[0] - state.velocity[0] * dt,
                state.position[1] - state.velocity[1] * dt,
                state.position[2],
            ],
            ..state
        };
        let last = sample_gps(&past, scene, cfg.gps_noise_std, &mut gps_rng);
        dead_reckon(last.position, state.velocity, dt)
    };
    let gps = gps_feature(position, scene.bs_position())?;
    let dets = sample_detections(&state, scene, &cfg.camera);
    let rgb = rgb_feature(&dets, &cfg.camera, state.orientation)?;
    let cloud = sample_lidar(&state, scene, &cfg.rays);
    let bev = lidar_to_bev(&cloud, &cfg.bev)?;

    Ok(VehicleSample {
        has_los: ch.has_los(),
        channel: ch.h,
        gps_available: fix.available,
        bundle: SensingBundle {
            gps: Some(gps),
            rgb: Some(rgb),
            lidar: Some(bev),
            pilot: PilotFeature(y.real_form()),
        },
        state,
    })
}

/// Draws samples `first..first + count`; sample `i` depends only on
/// `(cfg.seed, i)`, so ranges can be generated independently.
pub fn generate_samples(scene: &Scene, cfg: &DatasetConfig, pilots: &PilotMatrix<f64>, first: u64, count: usize) -> Result<Vec<Sample>> {
    (first..first + count as u64)
        .map(|i| {
            let vehicles = (0..cfg.k as u32)
                .map(|id| vehicle_sample(scene, cfg, pilots, i, id))
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample { vehicles })
        })
        .collect()
}

impl Dataset {
    pub fn generate(scene: Scene, config: DatasetConfig, n_samples: usize) -> Result<Self> {
        config.validate()?;
        let n = scene.n_antennas();
        let pilots = make_pilots(n, config.l_p, config.power, config.seed)?;
        let samples = generate_samples(&scene, &config, &pilots, 0, n_samples)?;
        Ok(Self {
            scene,
            config,
            pilots,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn noise_var(&self) -> f64 {
        self.config.noise_var()
    }

    /// Bytes a centralized learner would collect: every selected vehicle's
    /// serialized bundle (under its mask) for every listed sample.
    pub fn centralized_bytes(&self, indices: &[usize], masks: &[SensorMask]) -> usize {
        indices
            .iter()
            .map(|&i| {
                masks
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| mask_bundle(&self.samples[i].vehicles[k].bundle, m).to_bytes().len())
                    .sum::<usize>()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot_h;
    use crate::scene::{generate_scene, SceneConfig};

    fn small() -> (Scene, DatasetConfig) {
        let scene = generate_scene(&SceneConfig {
            n_v: 4,
            n_h: 4,
            ..SceneConfig::default()
        })
        .unwrap();
        let cfg = DatasetConfig {
            k: 3,
            l_p: 4,
            ..DatasetConfig::default()
        };
        (scene, cfg)
    }

    #[test]
    fn samples_are_deterministic_and_range_independent() {
        let (scene, cfg) = small();
        let ds = Dataset::generate(scene.clone(), cfg.clone(), 6).unwrap();
        let again = Dataset::generate(scene.clone(), cfg.clone(), 6).unwrap();
        assert_eq!(ds.samples, again.samples);
        let tail = generate_samples(&scene, &cfg, &ds.pilots, 4, 2).unwrap();
        assert_eq!(tail, ds.samples[4..].to_vec());
    }

    #[test]
    fn vehicles_stand_on_free_ground_with_valid_features() {
        let (scene, cfg) = small();
        let ds = Dataset::generate(scene, cfg.clone(), 20).unwrap();
        for s in &ds.samples {
            assert_eq!(s.vehicles.len(), 3);
            for v in &s.vehicles {
                let [x, y, _] = v.state.position;
                assert!(ds.scene.buildings.iter().all(|b| !b.contains_xy(x, y, 0.0)));
                v.bundle
                    .check_shapes(cfg.l_p, Some((cfg.bev.lx, cfg.bev.ly, cfg.bev.lz)))
                    .unwrap();
                assert_eq!(v.channel.len(), 16);
            }
        }
    }

    #[test]
    fn noiseless_pilot_matches_channel_projection() {
        let (scene, mut cfg) = small();
        cfg.snr_db = 400.0;
        let ds = Dataset::generate(scene, cfg, 2).unwrap();
        let v = &ds.samples[1].vehicles[2];
        for (l, col) in ds.pilots.x.columns().enumerate() {
            let y = dot_h(&v.channel, col);
            assert!((v.bundle.pilot.0[l] - y.re).abs() < 1e-9);
            assert!((v.bundle.pilot.0[4 + l] - y.im).abs() < 1e-9);
        }
    }

    #[test]
    fn centralized_bytes_follow_masks() {
        let (scene, cfg) = small();
        let ds = Dataset::generate(scene, cfg, 3).unwrap();
        let pilot_only = ds.centralized_bytes(&[0, 1, 2], &[SensorMask::PILOT_ONLY; 3]);
        // mask byte + u16 length + 8 f32 pilot reals per vehicle-sample.
        assert_eq!(pilot_only, 9 * (1 + 2 + 8 * 4));
        assert!(ds.centralized_bytes(&[0], &[SensorMask::ALL; 3]) > pilot_only / 3);
    }
}
