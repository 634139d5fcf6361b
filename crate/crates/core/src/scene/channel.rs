use num_complex::Complex;
use rand::Rng;

use super::geometry::{departure_angles, norm, sub, Vec3};
use super::{Scene, VehicleState};
use crate::scalar::Scalar;
use crate::seeding::{rng_for, tag};

/// UPA steering vector with half-wavelength spacing. Element `(p, q)`,
/// `p` vertical and `q` horizontal, sits at index `p·n_h + q` and equals
/// `exp(jπ(q·sinφ·sinθ + p·cosφ))`.
pub fn steering_vector<T: Scalar>(n_v: usize, n_h: usize, azimuth: T, elevation: T) -> Vec<Complex<T>> {
    let pi = T::PI();
    let u = elevation.sin() * azimuth.sin();
    let w = elevation.cos();
    let mut a = Vec::with_capacity(n_v * n_h);
    for p in 0..n_v {
        for q in 0..n_h {
            let arg = pi * (T::of(q as f64) * u + T::of(p as f64) * w);
            a.push(Complex::new(arg.cos(), arg.sin()));
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathInfo {
    pub azimuth: f64,
    pub elevation: f64,
    pub gain: Complex<f64>,
    pub is_los: bool,
    /// Building that produced a reflected path.
    pub reflector: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector {
    pub h: Vec<Complex<f64>>,
    pub paths: Vec<PathInfo>,
    /// No path reached the vehicle; `h` is identically zero.
    pub blocked: bool,
}

impl ChannelVector {
    pub fn has_los(&self) -> bool {
        self.paths.iter().any(|p| p.is_los)
    }

    pub fn to_scalar<T: Scalar>(&self) -> Vec<Complex<T>> {
        self.h
            .iter()
            .map(|z| Complex::new(T::of(z.re), T::of(z.im)))
            .collect()
    }
}

/// Vertical faces of a box as (axis, coordinate, outward sign).
fn faces(b: &super::Aabb) -> [(usize, f64, f64); 4] {
    [
        (0, b.min_corner[0], -1.0),
        (0, b.max_corner[0], 1.0),
        (1, b.min_corner[1], -1.0),
        (1, b.max_corner[1], 1.0),
    ]
}

/// Image-method reflection point on a face, when both endpoints sit in
/// front of it and the specular point lands on the face.
fn reflection_point(
    bld: &super::Aabb,
    (axis, coord, sign): (usize, f64, f64),
    bs: Vec3,
    rx: Vec3,
) -> Option<Vec3> {
    if sign * (bs[axis] - coord) <= 0.0 || sign * (rx[axis] - coord) <= 0.0 {
        return None;
    }
    let mut image = rx;
    image[axis] = 2.0 * coord - rx[axis];
    let t = (coord - bs[axis]) / (image[axis] - bs[axis]);
    let mut r = [0.0; 3];
    for i in 0..3 {
        r[i] = bs[i] + t * (image[i] - bs[i]);
    }
    r[axis] = coord;
    let other = 1 - axis;
    let on_face = r[other] >= bld.min_corner[other]
        && r[other] <= bld.max_corner[other]
        && r[2] >= 0.0
        && r[2] <= bld.max_corner[2];
    on_face.then_some(r)
}

/// Geometric multipath channel: a LoS path when unobstructed plus one
/// single-bounce path per building face visible from both the BS and the
/// vehicle. LoS gain is `d_ref/d`, reflections `ρ·d_ref/(d₁+d₂)`, each with
/// a seeded uniform phase.
pub fn synthesize_channel(scene: &Scene, vehicle: &VehicleState) -> ChannelVector {
    let cfg = &scene.config;
    let bs = cfg.bs_position;
    let rx = vehicle.position;
    let mut rng = rng_for(&[
        tag::PATH_PHASE,
        cfg.rng_seed,
        vehicle.id as u64,
        rx[0].to_bits(),
        rx[1].to_bits(),
        rx[2].to_bits(),
    ]);
    let mut phase = || {
        let psi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Complex::from_polar(1.0, psi)
    };

    let mut paths = Vec::new();
    let d_los = norm(sub(rx, bs));
    let los_phase = phase();
    if d_los > 0.0 && !scene.is_blocked(bs, rx) {
        let (azimuth, elevation) = departure_angles(bs, rx);
        paths.push(PathInfo {
            azimuth,
            elevation,
            gain: los_phase * (cfg.path_gain_ref_m / d_los),
            is_los: true,
            reflector: None,
        });
    }
    for (bi, bld) in scene.buildings.iter().enumerate() {
        for face in faces(bld) {
            let ph = phase();
            let Some(r) = reflection_point(bld, face, bs, rx) else {
                continue;
            };
            if scene.is_blocked(bs, r) || scene.is_blocked(r, rx) {
                continue;
            }
            let d1 = norm(sub(r, bs));
            let d2 = norm(sub(rx, r));
            let (azimuth, elevation) = departure_angles(bs, r);
            paths.push(PathInfo {
                azimuth,
                elevation,
                gain: ph * (cfg.reflection_coeff * cfg.path_gain_ref_m / (d1 + d2)),
                is_los: false,
                reflector: Some(bi),
            });
        }
    }

    let n = cfg.n_antennas();
    let mut h = vec![Complex::new(0.0, 0.0); n];
    for p in &paths {
        let a = steering_vector(cfg.n_v, cfg.n_h, p.azimuth, p.elevation);
        for (hi, ai) in h.iter_mut().zip(a) {
            *hi += p.gain * ai;
        }
    }
    ChannelVector {
        blocked: paths.is_empty(),
        h,
        paths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Aabb, SceneConfig, SensorMask};

    fn empty_scene() -> Scene {
        generate_scene(&SceneConfig {
            n_buildings: 0,
            n_v: 4,
            n_h: 4,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn vehicle(x: f64, y: f64) -> VehicleState {
        VehicleState::new(0, [x, y, 1.5], [0.0, 0.0], 0.0, SensorMask::ALL)
    }

    #[test]
    fn steering_vector_has_norm_n() {
        for &(az, el) in &[(0.0, 0.0), (1.0, 2.0), (-2.5, 0.3), (3.1, 1.57)] {
            let a = steering_vector::<f64>(16, 8, az, el);
            let n2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 128.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_path_channel_has_constant_modulus() {
        let scene = empty_scene();
        let ch = synthesize_channel(&scene, &vehicle(135.0, 67.5));
        assert_eq!(ch.paths.len(), 1);
        assert!(ch.has_los());
        let m0 = ch.h[0].norm();
        assert!(ch.h.iter().all(|z| (z.norm() - m0).abs() < 1e-12));
    }

    #[test]
    fn building_on_segment_removes_los() {
        let mut scene = empty_scene();
        // BS at (95, 67.5, 9); vehicle 40 m east; wall centered between.
        scene.buildings.push(Aabb::new([110.0, 60.0, 0.0], [120.0, 75.0, 30.0]));
        let v = vehicle(135.0, 67.5);
        // Oracle: the segment-box test on the straight line.
        assert!(scene.buildings[0].blocks_segment(scene.bs_position(), v.position));
        let ch = synthesize_channel(&scene, &v);
        assert!(!ch.has_los());
    }

    #[test]
    fn mirror_positions_have_opposite_azimuth() {
        let scene = empty_scene();
        // Mirror about the line y = y_BS through the BS.
        let a = synthesize_channel(&scene, &vehicle(130.0, 67.5 + 20.0));
        let b = synthesize_channel(&scene, &vehicle(130.0, 67.5 - 20.0));
        assert!((a.paths[0].azimuth + b.paths[0].azimuth).abs() < 1e-12);
    }

    #[test]
    fn reflection_from_side_wall() {
        let mut scene = empty_scene();
        // Wall north of the BS–vehicle line.
        scene.buildings.push(Aabb::new([100.0, 80.0, 0.0], [130.0, 90.0, 20.0]));
        let ch = synthesize_channel(&scene, &vehicle(135.0, 67.5));
        assert!(ch.has_los());
        let refl: Vec<_> = ch.paths.iter().filter(|p| !p.is_los).collect();
        assert_eq!(refl.len(), 1);
        // Specular point lies on y = 80 with equal-angle geometry.
        assert!(refl[0].azimuth > 0.0);
        assert!(refl[0].gain.norm() < ch.paths[0].gain.norm());
    }

    #[test]
    fn enclosed_vehicle_is_flagged_blocked() {
        let mut scene = empty_scene();
        // Vehicle boxed in by a ring of tall buildings.
        scene.buildings.push(Aabb::new([140.0, 60.0, 0.0], [141.0, 75.0, 80.0]));
        scene.buildings.push(Aabb::new([149.0, 60.0, 0.0], [150.0, 75.0, 80.0]));
        scene.buildings.push(Aabb::new([141.0, 60.0, 0.0], [149.0, 61.0, 80.0]));
        scene.buildings.push(Aabb::new([141.0, 74.0, 0.0], [149.0, 75.0, 80.0]));
        let ch = synthesize_channel(&scene, &vehicle(145.0, 67.5));
        assert!(ch.blocked);
        assert!(ch.h.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn channel_is_deterministic() {
        let scene = generate_scene(&SceneConfig::default()).unwrap();
        let v = vehicle(20.0, 20.0);
        assert_eq!(synthesize_channel(&scene, &v), synthesize_channel(&scene, &v));
    }
}
