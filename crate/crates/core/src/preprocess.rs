//! Turns raw sensor output into the fixed-size features consumed by the
//! local models: a 20-d GPS angle encoding, a 36-d multipath indicator plus
//! heading encoding, and a LiDAR bird's-eye-view occupancy count.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{wrap_angle, CameraFace, CameraIntrinsics, Detection, DetectionSet, PointCloud, SensorMask, Vec3};
use crate::scalar::Scalar;

pub const GPS_ENCODING_LEVELS: usize = 5;
pub const HEADING_ENCODING_LEVELS: usize = 10;
pub const GPS_FEATURE_LEN: usize = 4 * GPS_ENCODING_LEVELS;
pub const INDICATOR_LEN: usize = 16;
pub const RGB_FEATURE_LEN: usize = INDICATOR_LEN + 2 * HEADING_ENCODING_LEVELS;
pub const OBJECTNESS_THRESHOLD: f64 = 0.5;
/// Angle bins per camera.
pub const BINS_PER_CAMERA: usize = 4;
/// Camera order inside the indicator vector.
pub const INDICATOR_ORDER: [CameraFace; 4] =
    [CameraFace::Right, CameraFace::Left, CameraFace::Back, CameraFace::Front];

/// Constant-velocity position update used while GPS is unavailable.
pub fn dead_reckon(last_fix: Vec3, velocity: [f64; 2], dt: f64) -> Vec3 {
    debug_assert!(dt >= 0.0);
    [last_fix[0] + velocity[0] * dt, last_fix[1] + velocity[1] * dt, last_fix[2]]
}

/// Azimuth (two-argument arctangent) and angle from the downward vertical
/// between the vehicle and the BS.
pub fn bs_angles(p_vehicle: Vec3, p_bs: Vec3) -> Result<(f64, f64)> {
    let dx = p_vehicle[0] - p_bs[0];
    let dy = p_vehicle[1] - p_bs[1];
    let dz = p_vehicle[2] - p_bs[2];
    let r = (dx * dx + dy * dy + dz * dz).sqrt();
    if !(r > 0.0) {
        return Err(Error::DegenerateGeometry("vehicle coincides with the BS".into()));
    }
    let theta = dy.atan2(dx);
    let phi = ((p_bs[2] - p_vehicle[2]) / r).clamp(-1.0, 1.0).acos();
    Ok((theta, phi))
}

/// High-frequency encoding `(sin(2⁰πp), cos(2⁰πp), …, sin(2^{L-1}πp), cos(2^{L-1}πp))`.
pub fn posenc<T: Scalar>(p: T, levels: usize) -> Vec<T> {
    assert!(levels >= 1, "encoding needs at least one level");
    let mut out = Vec::with_capacity(2 * levels);
    let mut freq = T::PI();
    for _ in 0..levels {
        let (s, c) = (freq * p).sin_cos();
        out.push(s);
        out.push(c);
        freq = freq + freq;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsFeature(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbFeature(pub Vec<f64>);

/// Angles are divided by π before encoding.
pub fn gps_feature(p_noisy: Vec3, p_bs: Vec3) -> Result<GpsFeature> {
    let (theta, phi) = bs_angles(p_noisy, p_bs)?;
    let mut x = posenc(theta / PI, GPS_ENCODING_LEVELS);
    x.extend(posenc(phi / PI, GPS_ENCODING_LEVELS));
    Ok(GpsFeature(x))
}

/// Bearing of a detection center. The pixel point is `(u·W, v·H, 1)`
/// (u horizontal), back-projected through `K_in⁻¹`.
pub fn detection_to_azimuth(det: &Detection, k: &CameraIntrinsics) -> Result<f64> {
    let inv = invert3(&k.matrix()).ok_or(Error::SingularIntrinsics)?;
    let pix = [det.u * k.width, det.v * k.height, 1.0];
    let mut pc = [0.0; 3];
    for (i, row) in inv.iter().enumerate() {
        pc[i] = row[0] * pix[0] + row[1] * pix[1] + row[2] * pix[2];
    }
    if pc[2] == 0.0 {
        return Err(Error::SingularIntrinsics);
    }
    Ok((pc[0] / pc[2]).atan())
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = adj[i][j] / det;
        }
    }
    Some(inv)
}

/// Bin layout `[ω_min, ω_min + 4Δω)` with `ω_min = -FoV/2`, `Δω = FoV/4`.
pub fn angle_bins(k: &CameraIntrinsics) -> (f64, f64) {
    let fov = k.hfov();
    (-0.5 * fov, fov / BINS_PER_CAMERA as f64)
}

/// 16-d multipath indicator: per camera (right, left, back, front), bin `j`
/// is set when any detection with objectness above 0.5 falls into it.
pub fn indicator_vector(dets: &DetectionSet, k: &CameraIntrinsics) -> Result<[u8; INDICATOR_LEN]> {
    let (omega_min, delta) = angle_bins(k);
    let mut r = [0u8; INDICATOR_LEN];
    for (ci, face) in INDICATOR_ORDER.iter().enumerate() {
        for det in dets.face(*face) {
            if !(det.s > OBJECTNESS_THRESHOLD) {
                continue;
            }
            let omega = detection_to_azimuth(det, k)?;
            let bin = ((omega - omega_min) / delta).floor();
            if (0.0..BINS_PER_CAMERA as f64).contains(&bin) {
                r[ci * BINS_PER_CAMERA + bin as usize] = 1;
            }
        }
    }
    Ok(r)
}

/// Indicator followed by the heading encoding (heading wrapped to
/// `[-π, π)` and divided by π).
pub fn rgb_feature(dets: &DetectionSet, k: &CameraIntrinsics, heading: f64) -> Result<RgbFeature> {
    let r = indicator_vector(dets, k)?;
    let mut x: Vec<f64> = r.iter().map(|&b| b as f64).collect();
    x.extend(posenc(wrap_angle(heading) / PI, HEADING_ENCODING_LEVELS));
    Ok(RgbFeature(x))
}

/// Voxel grid over `[min, max)` in the vehicle frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub lx: usize,
    pub ly: usize,
    pub lz: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl BevGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lx == 0 || self.ly == 0 || self.lz == 0 {
            return Err(Error::InvalidConfig("BEV grid dimensions must be ≥ 1".into()));
        }
        if (0..3).any(|i| !(self.min[i] < self.max[i])) {
            return Err(Error::InvalidConfig("BEV bounds must be ordered".into()));
        }
        Ok(())
    }
}

impl Default for BevGrid {
    fn default() -> Self {
        Self {
            lx: 16,
            ly: 16,
            lz: 8,
            min: [-40.0, -40.0, -2.0],
            max: [40.0, 40.0, 14.0],
        }
    }
}

/// Column sums of a binary occupancy grid, row-major `lx × ly`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarBev {
    pub lx: usize,
    pub ly: usize,
    pub lz: usize,
    pub cells: Vec<u16>,
}

impl LidarBev {
    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.cells[i * self.ly + j]
    }
}

pub fn lidar_to_bev(cloud: &PointCloud, grid: &BevGrid) -> Result<LidarBev> {
    grid.validate()?;
    let dims = [grid.lx, grid.ly, grid.lz];
    let mut occupied = vec![false; grid.lx * grid.ly * grid.lz];
    'points: for p in &cloud.points {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - grid.min[a]) / (grid.max[a] - grid.min[a]) * dims[a] as f64;
            if !(f >= 0.0 && f < dims[a] as f64) {
                continue 'points;
            }
            idx[a] = f as usize;
        }
        occupied[(idx[0] * grid.ly + idx[1]) * grid.lz + idx[2]] = true;
    }
    let cells = occupied
        .chunks(grid.lz)
        .map(|col| col.iter().filter(|&&o| o).count() as u16)
        .collect();
    Ok(LidarBev {
        lx: grid.lx,
        ly: grid.ly,
        lz: grid.lz,
        cells,
    })
}

/// Received pilot in real form: `Re(y) ++ Im(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotFeature(pub Vec<f64>);

/// Everything one vehicle contributes to a training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingBundle {
    pub gps: Option<GpsFeature>,
    pub rgb: Option<RgbFeature>,
    pub lidar: Option<LidarBev>,
    pub pilot: PilotFeature,
}

impl SensingBundle {
    pub fn mask(&self) -> SensorMask {
        SensorMask {
            gps: self.gps.is_some(),
            rgb: self.rgb.is_some(),
            lidar: self.lidar.is_some(),
        }
    }

    /// Shape contract of the modality features.
    pub fn check_shapes(&self, l_p: usize, grid: Option<(usize, usize, usize)>) -> Result<()> {
        let fail = |m: String| Err(Error::Format(m));
        if let Some(g) = &self.gps {
            if g.0.len() != GPS_FEATURE_LEN {
                return fail(format!("GPS feature has length {}", g.0.len()));
            }
        }
        if let Some(r) = &self.rgb {
            if r.0.len() != RGB_FEATURE_LEN || r.0[..INDICATOR_LEN].iter().any(|&b| b != 0.0 && b != 1.0) {
                return fail("RGB feature violates its 16 + 20 layout".into());
            }
        }
        if let Some(b) = &self.lidar {
            if let Some((lx, ly, lz)) = grid {
                if (b.lx, b.ly, b.lz) != (lx, ly, lz) {
                    return fail("BEV grid differs from configuration".into());
                }
            }
            if b.cells.len() != b.lx * b.ly || b.cells.iter().any(|&c| c as usize > b.lz) {
                return fail("BEV cells out of range".into());
            }
        }
        if self.pilot.0.len() != 2 * l_p {
            return fail(format!("pilot feature has length {}", self.pilot.0.len()));
        }
        Ok(())
    }

    /// Little-endian dataset record: mask byte, then GPS and RGB as f32,
    /// BEV as (u16 lx, u16 ly, u16 lz, u8 cells), then `u16 len` + pilot f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.mask().bits()];
        let put_f32 = |out: &mut Vec<u8>, xs: &[f64]| {
            for &x in xs {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        };
        if let Some(g) = &self.gps {
            put_f32(&mut out, &g.0);
        }
        if let Some(r) = &self.rgb {
            put_f32(&mut out, &r.0);
        }
        if let Some(b) = &self.lidar {
            for d in [b.lx, b.ly, b.lz] {
                out.extend_from_slice(&(d as u16).to_le_bytes());
            }
            out.extend(b.cells.iter().map(|&c| c.min(u8::MAX as u16) as u8));
        }
        out.extend_from_slice(&(self.pilot.0.len() as u16).to_le_bytes());
        put_f32(&mut out, &self.pilot.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let mask = SensorMask::from_bits(cur.u8()?);
        let gps = if mask.gps { Some(GpsFeature(cur.f32s(GPS_FEATURE_LEN)?)) } else { None };
        let rgb = if mask.rgb { Some(RgbFeature(cur.f32s(RGB_FEATURE_LEN)?)) } else { None };
        let lidar = if mask.lidar {
            let (lx, ly, lz) = (cur.u16()? as usize, cur.u16()? as usize, cur.u16()? as usize);
            let cells = cur.take(lx * ly)?.iter().map(|&c| c as u16).collect();
            Some(LidarBev { lx, ly, lz, cells })
        } else {
            None
        };
        let n = cur.u16()? as usize;
        let pilot = PilotFeature(cur.f32s(n)?);
        Ok((SensingBundle { gps, rgb, lidar, pilot }, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated bundle record".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dead_reckoning_examples() {
        let p = [1.0, 2.0, 1.5];
        assert_eq!(dead_reckon(p, [3.0, 4.0], 0.0), p);
        assert_eq!(dead_reckon([0.0, 0.0, 0.0], [1.0, 2.0], 3.0), [3.0, 6.0, 0.0]);
        let two = dead_reckon(dead_reckon(p, [0.5, -1.0], 1.0), [0.5, -1.0], 1.0);
        assert_eq!(two, dead_reckon(p, [0.5, -1.0], 2.0));
    }

    #[test]
    fn bs_angle_examples() {
        let (theta, phi) = bs_angles([10.0, 10.0, 0.0], [0.0, 0.0, 9.0]).unwrap();
        assert!((theta - PI / 4.0).abs() < 1e-15);
        // Direct evaluation of the elevation formula.
        assert!((phi - (9.0 / 281f64.sqrt()).acos()).abs() < 1e-15);
        let (_, phi) = bs_angles([0.0, 0.0, 0.0], [0.0, 0.0, 9.0]).unwrap();
        assert_eq!(phi, 0.0);
        assert!(matches!(
            bs_angles([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn posenc_examples() {
        let z = posenc(0.0f64, 5);
        assert_eq!(z, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let h = posenc(0.5f64, 2);
        let want = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in h.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for l in 1..12 {
            assert_eq!(posenc(0.3f32, l).len(), 2 * l);
        }
    }

    proptest! {
        #[test]
        fn posenc_is_two_periodic(p in -3.0f64..3.0, l in 1usize..8) {
            let a = posenc(p, l);
            let b = posenc(p + 2.0, l);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12 * (1 << l) as f64);
            }
        }
    }

    #[test]
    fn gps_feature_below_bs() {
        let g = gps_feature([0.0, 0.0, 0.0], [0.0, 0.0, 9.0]).unwrap();
        assert_eq!(g.0.len(), 20);
        assert_eq!(&g.0[10..], posenc(0.0f64, 5).as_slice());
        assert!(g.0.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn gps_feature_mirror_symmetry() {
        let bs = [95.0, 67.5, 9.0];
        let a = gps_feature([120.0, 80.0, 1.5], bs).unwrap();
        let b = gps_feature([120.0, 55.0, 1.5], bs).unwrap();
        assert_ne!(a.0[..10], b.0[..10]);
        for (x, y) in a.0[10..].iter().zip(&b.0[10..]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    fn det(u: f64, s: f64) -> Detection {
        Detection { u, v: 0.5, w: 0.1, h: 0.1, s }
    }

    #[test]
    fn azimuth_of_centered_and_edge_boxes() {
        let k = CameraIntrinsics::default();
        assert!(detection_to_azimuth(&det(0.5, 1.0), &k).unwrap().abs() < 1e-15);
        let edge = detection_to_azimuth(&det(0.0, 1.0), &k).unwrap();
        assert!((edge.abs().to_degrees() - 45.0).abs() < 0.5);
        let right = detection_to_azimuth(&det(1.0, 1.0), &k).unwrap();
        assert!((right.to_degrees() - 45.0).abs() < 0.5);
    }

    #[test]
    fn azimuth_is_monotone_in_u() {
        let k = CameraIntrinsics::default();
        let w: Vec<f64> = (1..10)
            .map(|i| detection_to_azimuth(&det(i as f64 / 10.0, 1.0), &k).unwrap())
            .collect();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn singular_intrinsics_are_rejected() {
        let mut k = CameraIntrinsics::default();
        k.fx = 0.0;
        assert!(matches!(detection_to_azimuth(&det(0.5, 1.0), &k), Err(Error::SingularIntrinsics)));
    }

    #[test]
    fn indicator_examples() {
        let k = CameraIntrinsics::default();
        assert_eq!(indicator_vector(&DetectionSet::default(), &k).unwrap(), [0; 16]);

        // Bin index 2 of the right camera: ω ∈ [0°, 22.5°) → u ∈ [0.5, 0.707).
        let mut d = DetectionSet::default();
        d.right.push(det(0.6, 0.7));
        let r = indicator_vector(&d, &k).unwrap();
        let mut want = [0u8; 16];
        want[2] = 1;
        assert_eq!(r, want);

        d.right.push(det(0.65, 0.9));
        assert_eq!(indicator_vector(&d, &k).unwrap(), want);

        // Low objectness is ignored.
        d.front.push(det(0.6, 0.5));
        assert_eq!(indicator_vector(&d, &k).unwrap(), want);
    }

    #[test]
    fn rgb_feature_layout() {
        let k = CameraIntrinsics::default();
        let mut d = DetectionSet::default();
        d.front.push(det(0.1, 0.9));
        let f = rgb_feature(&d, &k, 4.0).unwrap();
        assert_eq!(f.0.len(), 36);
        assert_eq!(f.0[12], 1.0);
        assert!(f.0[..16].iter().all(|&b| b == 0.0 || b == 1.0));
        assert!(f.0[16..].iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn bev_examples() {
        let grid = BevGrid {
            lx: 4,
            ly: 4,
            lz: 4,
            min: [0.0, 0.0, 0.0],
            max: [4.0, 4.0, 4.0],
        };
        let empty = lidar_to_bev(&PointCloud::default(), &grid).unwrap();
        assert!(empty.cells.iter().all(|&c| c == 0));

        let same_voxel = PointCloud {
            points: vec![[1.1, 2.1, 0.1], [1.2, 2.2, 0.2], [1.3, 2.3, 0.3], [1.4, 2.4, 0.4], [1.5, 2.5, 0.5]],
        };
        assert_eq!(lidar_to_bev(&same_voxel, &grid).unwrap().get(1, 2), 1);

        let stacked = PointCloud {
            points: vec![[1.5, 2.5, 0.5], [1.5, 2.5, 3.5], [9.0, 0.0, 0.0], [0.0, 0.0, 4.0]],
        };
        let bev = lidar_to_bev(&stacked, &grid).unwrap();
        assert_eq!(bev.get(1, 2), 2);
        assert_eq!(bev.cells.iter().map(|&c| c as u32).sum::<u32>(), 2);
    }

    #[test]
    fn bev_grid_validation() {
        let mut g = BevGrid::default();
        g.lz = 0;
        assert!(lidar_to_bev(&PointCloud::default(), &g).is_err());
        let mut g = BevGrid::default();
        g.max[0] = g.min[0];
        assert!(g.validate().is_err());
    }

    #[test]
    fn bundle_record_round_trip() {
        let b = SensingBundle {
            gps: Some(GpsFeature(posenc(0.25, 10))),
            rgb: None,
            lidar: Some(LidarBev { lx: 2, ly: 2, lz: 3, cells: vec![0, 1, 3, 2] }),
            pilot: PilotFeature(vec![0.5, -0.25, 1.0, 2.0]),
        };
        let bytes = b.to_bytes();
        let (back, used) = SensingBundle::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back.lidar, b.lidar);
        assert_eq!(back.pilot, b.pilot);
        assert!(SensingBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
