//! Per-vehicle model: one feature branch per available modality, an
//! integration net over their concatenation, and the real-to-complex map
//! onto a precoding vector.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::airlink::eta;
use crate::error::{Error, Result};
use crate::nn::{concat_features, split_features, AdamState, Cache, Checkpoint, LayerSpec, Network, ParamBlock, Tensor};
use crate::preprocess::{SensingBundle, GPS_FEATURE_LEN, RGB_FEATURE_LEN};
use crate::scalar::Scalar;
use crate::scene::SensorMask;
use crate::seeding::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub l_g: usize,
    pub l_r: usize,
    pub l_l: usize,
    pub l_s: usize,
    pub integration_hidden: usize,
    pub lidar_channels: usize,
    pub n_antennas: usize,
    pub l_p: usize,
    pub bev_lx: usize,
    pub bev_ly: usize,
    pub bev_lz: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Gps,
    Rgb,
    Lidar,
    Pilot,
    Integration,
}

impl Branch {
    pub const ALL: [Branch; 5] = [Branch::Gps, Branch::Rgb, Branch::Lidar, Branch::Pilot, Branch::Integration];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Gps => "gps",
            Branch::Rgb => "rgb",
            Branch::Lidar => "lidar",
            Branch::Pilot => "pilot",
            Branch::Integration => "integration",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl BranchConfig {
    /// Full-size feature widths: 256/256/512/128 with a 512-wide integration layer.
    pub fn full(n_antennas: usize, l_p: usize, bev: (usize, usize, usize)) -> Self {
        Self {
            l_g: 256,
            l_r: 256,
            l_l: 512,
            l_s: 128,
            integration_hidden: 512,
            lidar_channels: 8,
            n_antennas,
            l_p,
            bev_lx: bev.0,
            bev_ly: bev.1,
            bev_lz: bev.2,
        }
    }

    /// Narrow widths for single-core runs.
    pub fn desk(n_antennas: usize, l_p: usize, bev: (usize, usize, usize)) -> Self {
        Self {
            l_g: 16,
            l_r: 16,
            l_l: 16,
            l_s: 16,
            integration_hidden: 64,
            lidar_channels: 4,
            ..Self::full(n_antennas, l_p, bev)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.l_g,
            self.l_r,
            self.l_l,
            self.l_s,
            self.integration_hidden,
            self.lidar_channels,
            self.n_antennas,
            self.l_p,
            self.bev_lz,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("branch sizes must be positive".into()));
        }
        if self.bev_lx < 7 || self.bev_ly < 7 {
            return Err(Error::InvalidConfig("BEV grid must be at least 7×7 for two stride-2 convolutions".into()));
        }
        Ok(())
    }

    pub fn feature_width(&self, b: Branch) -> usize {
        match b {
            Branch::Gps => self.l_g,
            Branch::Rgb => self.l_r,
            Branch::Lidar => self.l_l,
            Branch::Pilot => self.l_s,
            Branch::Integration => 2 * self.n_antennas,
        }
    }

    /// Width of `m^I`: the sum of the present branch outputs.
    pub fn integration_input(&self, mask: SensorMask) -> usize {
        present_branches(mask).iter().map(|&b| self.feature_width(b)).sum()
    }

    fn conv_out(&self) -> (usize, usize) {
        let after = |x: usize| ((x - 3) / 2 + 1 - 3) / 2 + 1;
        (after(self.bev_lx), after(self.bev_ly))
    }

    fn specs(&self, b: Branch, mask: SensorMask) -> (Vec<usize>, Vec<LayerSpec>) {
        let mlp = |input: usize, out: usize| {
            let hid = 2 * out;
            vec![
                LayerSpec::Dense { inputs: input, outputs: hid },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: hid, outputs: hid },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: hid, outputs: out },
            ]
        };
        match b {
            Branch::Gps => (vec![GPS_FEATURE_LEN], mlp(GPS_FEATURE_LEN, self.l_g)),
            Branch::Rgb => (vec![RGB_FEATURE_LEN], mlp(RGB_FEATURE_LEN, self.l_r)),
            Branch::Pilot => (vec![2 * self.l_p], mlp(2 * self.l_p, self.l_s)),
            Branch::Lidar => {
                let c = self.lidar_channels;
                let (ox, oy) = self.conv_out();
                (
                    vec![1, self.bev_lx, self.bev_ly],
                    vec![
                        LayerSpec::Conv2d {
                            in_channels: 1,
                            out_channels: c,
                            kernel: 3,
                            stride: 2,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Conv2d {
                            in_channels: c,
                            out_channels: c,
                            kernel: 3,
                            stride: 2,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Flatten,
                        LayerSpec::Dense {
                            inputs: c * ox * oy,
                            outputs: self.l_l,
                        },
                    ],
                )
            }
            Branch::Integration => {
                let input = self.integration_input(mask);
                (
                    vec![input],
                    vec![
                        LayerSpec::Dense {
                            inputs: input,
                            outputs: self.integration_hidden,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Dense {
                            inputs: self.integration_hidden,
                            outputs: 2 * self.n_antennas,
                        },
                    ],
                )
            }
        }
    }
}

/// Feature branches present under `mask`, in concatenation order.
pub fn present_branches(mask: SensorMask) -> Vec<Branch> {
    let mut v = Vec::with_capacity(4);
    if mask.gps {
        v.push(Branch::Gps);
    }
    if mask.rgb {
        v.push(Branch::Rgb);
    }
    if mask.lidar {
        v.push(Branch::Lidar);
    }
    v.push(Branch::Pilot);
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalModel<T> {
    pub vehicle_id: u32,
    pub mask: SensorMask,
    pub config: BranchConfig,
    pub seed: u64,
    /// Feature branches in concatenation order.
    branches: Vec<(Branch, Network<T>)>,
    integration: Network<T>,
}

#[derive(Clone, Debug)]
pub struct LocalCache<T> {
    branch_caches: Vec<Cache<T>>,
    integration: Cache<T>,
    batch: usize,
}

pub fn branch_seed(seed: u64, vehicle_id: u32, b: Branch) -> u64 {
    mix_seed(&[seed, vehicle_id as u64, b.index()])
}

pub fn build_local_model<T: Scalar>(mask: SensorMask, config: &BranchConfig, vehicle_id: u32, seed: u64) -> Result<LocalModel<T>> {
    config.validate()?;
    let mut branches = Vec::new();
    for b in present_branches(mask) {
        let (shape, specs) = config.specs(b, mask);
        let net = Network::build(b.name(), shape, &specs, branch_seed(seed, vehicle_id, b))?;
        debug_assert_eq!(net.output_len(), config.feature_width(b));
        branches.push((b, net));
    }
    let (shape, specs) = config.specs(Branch::Integration, mask);
    let integration = Network::build(
        Branch::Integration.name(),
        shape,
        &specs,
        branch_seed(seed, vehicle_id, Branch::Integration),
    )?;
    Ok(LocalModel {
        vehicle_id,
        mask,
        config: *config,
        seed,
        branches,
        integration,
    })
}

impl<T: Scalar> LocalModel<T> {
    pub fn branches(&self) -> impl Iterator<Item = (Branch, &Network<T>)> {
        self.branches.iter().map(|(b, n)| (*b, n))
    }

    pub fn branch(&self, b: Branch) -> Option<&Network<T>> {
        if b == Branch::Integration {
            return Some(&self.integration);
        }
        self.branches.iter().find(|(k, _)| *k == b).map(|(_, n)| n)
    }

    pub fn integration(&self) -> &Network<T> {
        &self.integration
    }

    pub fn integration_mut(&mut self) -> &mut Network<T> {
        &mut self.integration
    }

    pub fn integration_input_width(&self) -> usize {
        self.integration.input_shape()[0]
    }

    pub fn output_len(&self) -> usize {
        self.config.n_antennas
    }

    fn nets(&self) -> impl Iterator<Item = &Network<T>> {
        self.branches.iter().map(|(_, n)| n).chain(std::iter::once(&self.integration))
    }

    fn nets_mut(&mut self) -> impl Iterator<Item = &mut Network<T>> {
        self.branches
            .iter_mut()
            .map(|(_, n)| n)
            .chain(std::iter::once(&mut self.integration))
    }

    /// All parameter blocks: branches in order, then the integration net.
    pub fn params(&self) -> Vec<&[T]> {
        self.nets().flat_map(|n| n.params()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.nets()
            .flat_map(|n| n.param_shapes().into_iter().map(move |(p, _)| format!("{}.{p}", n.name())))
            .collect()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    pub fn new_optimizer(&self, config: crate::nn::AdamConfig) -> AdamState<T> {
        AdamState::new(config, &self.block_sizes())
    }

    pub fn apply_gradients(&mut self, adam: &mut AdamState<T>, grads: &[Vec<T>]) {
        let mut params: Vec<&mut [T]> = self.nets_mut().flat_map(|n| n.params_mut()).collect();
        adam.apply(&mut params, grads);
    }

    /// Mutable parameter blocks in [`LocalModel::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.nets_mut().flat_map(|n| n.params_mut()).collect()
    }

    fn branch_input(&self, b: Branch, bundles: &[&SensingBundle]) -> Result<Tensor<T>> {
        let mut data = Vec::new();
        let c = &self.config;
        for bundle in bundles {
            match b {
                Branch::Gps => {
                    let g = bundle.gps.as_ref().ok_or(Error::MissingModality("gps"))?;
                    data.extend(g.0.iter().map(|&x| T::of(x)));
                }
                Branch::Rgb => {
                    let r = bundle.rgb.as_ref().ok_or(Error::MissingModality("rgb"))?;
                    data.extend(r.0.iter().map(|&x| T::of(x)));
                }
                Branch::Lidar => {
                    let l = bundle.lidar.as_ref().ok_or(Error::MissingModality("lidar"))?;
                    if (l.lx, l.ly, l.lz) != (c.bev_lx, c.bev_ly, c.bev_lz) {
                        return Err(Error::ShapeMismatch {
                            layer: "lidar input".into(),
                            expected: vec![c.bev_lx, c.bev_ly, c.bev_lz],
                            got: vec![l.lx, l.ly, l.lz],
                        });
                    }
                    let lz = T::of(l.lz as f64);
                    data.extend(l.cells.iter().map(|&x| T::of(x as f64) / lz));
                }
                Branch::Pilot => {
                    if bundle.pilot.0.is_empty() {
                        return Err(Error::MissingPilotBranch);
                    }
                    data.extend(bundle.pilot.0.iter().map(|&x| T::of(x)));
                }
                Branch::Integration => unreachable!("integration input is internal"),
            }
        }
        let shape = self.branch(b).expect("present").input_shape().to_vec();
        Tensor::new(bundles.len(), shape, data)
    }

    /// Real network output `x ∈ R^{2N}` per sample (before the complex map).
    pub fn forward_real(&self, bundles: &[&SensingBundle]) -> Result<(Tensor<T>, LocalCache<T>)> {
        let mut feats = Vec::with_capacity(self.branches.len());
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        for (b, net) in &self.branches {
            let x = self.branch_input(*b, bundles)?;
            let (y, cache) = net.forward(&x)?;
            feats.push(y);
            branch_caches.push(cache);
        }
        let joined = concat_features(&feats.iter().collect::<Vec<_>>())?;
        let (out, integration) = self.integration.forward(&joined)?;
        Ok((
            out,
            LocalCache {
                branch_caches,
                integration,
                batch: bundles.len(),
            },
        ))
    }

    /// `v_k = η(G^I(m^G ⊕ m^R ⊕ m^L ⊕ m^P))` for each sample.
    pub fn forward(&self, bundles: &[&SensingBundle]) -> Result<(Vec<Vec<Complex<T>>>, LocalCache<T>)> {
        let (out, cache) = self.forward_real(bundles)?;
        let v = (0..out.batch()).map(|b| eta(out.sample(b))).collect::<Result<Vec<_>>>()?;
        Ok((v, cache))
    }

    /// Parameter gradients from `∂L/∂x` (stacked real and imaginary parts),
    /// in [`LocalModel::params`] order.
    pub fn backward(&self, cache: &LocalCache<T>, grad_x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        if grad_x.batch() != cache.batch {
            return Err(Error::ShapeMismatch {
                layer: "local model output gradient".into(),
                expected: vec![cache.batch],
                got: vec![grad_x.batch()],
            });
        }
        if cache.branch_caches.len() != self.branches.len() {
            return Err(Error::StaleCache {
                cached: cache.branch_caches.len() as u64,
                current: self.branches.len() as u64,
            });
        }
        let (g_int, g_joined) = self.integration.backward(&cache.integration, grad_x)?;
        let widths: Vec<usize> = self.branches.iter().map(|(_, n)| n.output_len()).collect();
        let g_feats = split_features(&g_joined, &widths)?;
        let mut grads = Vec::new();
        for ((_, net), (c, g)) in self.branches.iter().zip(cache.branch_caches.iter().zip(&g_feats)) {
            let (gp, _) = net.backward(c, g)?;
            grads.extend(gp);
        }
        grads.extend(g_int);
        Ok(grads)
    }

    /// Backward from complex gradients `∂L/∂Re(v) + j∂L/∂Im(v)` per sample.
    pub fn backward_complex(&self, cache: &LocalCache<T>, grad_v: &[Vec<Complex<T>>]) -> Result<Vec<Vec<T>>> {
        let rows: Vec<Vec<T>> = grad_v.iter().map(|g| crate::airlink::eta_inv(g)).collect();
        let width = 2 * self.config.n_antennas;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch {
                layer: "local model output gradient".into(),
                expected: vec![width],
                got: rows.iter().map(Vec::len).collect(),
            });
        }
        self.backward(cache, &Tensor::from_rows(&rows)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut blocks = Vec::new();
        for net in self.nets() {
            for ((name, shape), data) in net.param_shapes().into_iter().zip(net.params()) {
                blocks.push(ParamBlock {
                    name: format!("{}.{name}", net.name()),
                    seed: net.seed(),
                    shape,
                    data: data.to_vec(),
                });
            }
        }
        Checkpoint {
            vehicle_id: self.vehicle_id,
            mask_bits: self.mask.bits(),
            blocks,
        }
    }

    /// Rebuilds the architecture from `config` and the stored mask, then
    /// loads every block by name with a shape check.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>, config: &BranchConfig, seed: u64) -> Result<Self> {
        let mask = SensorMask::from_bits(ckpt.mask_bits);
        let mut model = build_local_model::<T>(mask, config, ckpt.vehicle_id, seed)?;
        let names = model.param_names();
        let shapes: Vec<Vec<usize>> = model.nets().flat_map(|n| n.param_shapes().into_iter().map(|(_, s)| s)).collect();
        if ckpt.blocks.len() != names.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} blocks, model needs {}",
                ckpt.blocks.len(),
                names.len()
            )));
        }
        let mut params = model.params_mut();
        for ((name, shape), dst) in names.iter().zip(&shapes).zip(params.iter_mut()) {
            let blk = ckpt.block(name).ok_or_else(|| Error::Format(format!("missing block {name}")))?;
            if &blk.shape != shape {
                return Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    expected: shape.clone(),
                    got: blk.shape.clone(),
                });
            }
            dst.copy_from_slice(&blk.data);
        }
        drop(params);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{GpsFeature, LidarBev, PilotFeature, RgbFeature};
    use crate::seeding::rng_for;
    use rand::Rng;

    fn tiny_config() -> BranchConfig {
        BranchConfig {
            l_g: 3,
            l_r: 3,
            l_l: 3,
            l_s: 3,
            integration_hidden: 5,
            lidar_channels: 2,
            n_antennas: 2,
            l_p: 2,
            bev_lx: 7,
            bev_ly: 8,
            bev_lz: 4,
        }
    }

    fn bundle(mask: SensorMask, cfg: &BranchConfig, seed: u64) -> SensingBundle {
        let mut rng = rng_for(&[seed]);
        let mut f = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let gps = mask.gps.then(|| GpsFeature(f(GPS_FEATURE_LEN)));
        let rgb = mask.rgb.then(|| {
            let mut r = f(RGB_FEATURE_LEN);
            for x in &mut r[..16] {
                *x = if *x > 0.0 { 1.0 } else { 0.0 };
            }
            RgbFeature(r)
        });
        let pilot = PilotFeature(f(2 * cfg.l_p));
        let mut rng = rng_for(&[seed, 1]);
        let lidar = mask.lidar.then(|| LidarBev {
            lx: cfg.bev_lx,
            ly: cfg.bev_ly,
            lz: cfg.bev_lz,
            cells: (0..cfg.bev_lx * cfg.bev_ly)
                .map(|_| rng.random_range(0..=cfg.bev_lz as u16))
                .collect(),
        });
        SensingBundle { gps, rgb, lidar, pilot }
    }

    #[test]
    fn integration_width_follows_mask() {
        let cfg = BranchConfig::full(128, 8, (16, 16, 8));
        let m = build_local_model::<f32>(SensorMask::PILOT_ONLY, &cfg, 0, 1).unwrap();
        assert_eq!(m.integration_input_width(), 128);
        let m = build_local_model::<f32>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        assert_eq!(m.integration_input_width(), 1152);
        let gp = SensorMask {
            gps: true,
            rgb: false,
            lidar: false,
        };
        let m = build_local_model::<f32>(gp, &cfg, 0, 1).unwrap();
        assert_eq!(m.integration_input_width(), 384);
        assert!(m.branch(Branch::Rgb).is_none());
        assert!(m.branch(Branch::Lidar).is_none());
        assert_eq!(m.output_len(), 128);
    }

    #[test]
    fn branch_dimensions_match_their_domains() {
        let cfg = BranchConfig::full(128, 8, (16, 16, 8));
        let m = build_local_model::<f32>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        let io = |b| {
            let n = m.branch(b).unwrap();
            (n.input_shape().to_vec(), n.output_len())
        };
        assert_eq!(io(Branch::Gps), (vec![20], 256));
        assert_eq!(io(Branch::Rgb), (vec![36], 256));
        assert_eq!(io(Branch::Lidar), (vec![1, 16, 16], 512));
        assert_eq!(io(Branch::Pilot), (vec![16], 128));
        assert_eq!(io(Branch::Integration), (vec![1152], 256));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = tiny_config();
        let a = build_local_model::<f64>(SensorMask::ALL, &cfg, 3, 9).unwrap();
        let b = build_local_model::<f64>(SensorMask::ALL, &cfg, 3, 9).unwrap();
        let c = build_local_model::<f64>(SensorMask::ALL, &cfg, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zeroed_final_layer_gives_zero_precoder() {
        let cfg = tiny_config();
        let mut m = build_local_model::<f64>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        let net = m.integration_mut();
        let last = net.params().len();
        for blk in net.params_mut().into_iter().skip(last - 2) {
            blk.fill(0.0);
        }
        let b = bundle(SensorMask::ALL, &cfg, 5);
        let (v, _) = m.forward(&[&b]).unwrap();
        assert_eq!(v[0].len(), cfg.n_antennas);
        assert!(v[0].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn missing_modality_is_reported() {
        let cfg = tiny_config();
        let m = build_local_model::<f64>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        let b = bundle(SensorMask::PILOT_ONLY, &cfg, 5);
        assert!(matches!(m.forward(&[&b]), Err(Error::MissingModality("gps"))));
        let mut b = bundle(SensorMask::PILOT_ONLY, &cfg, 5);
        b.pilot.0.clear();
        let p = build_local_model::<f64>(SensorMask::PILOT_ONLY, &cfg, 0, 1).unwrap();
        assert!(p.forward(&[&b]).is_err());
    }

    #[test]
    fn zero_gradient_gives_zero_parameter_gradients() {
        let cfg = tiny_config();
        let m = build_local_model::<f64>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        let b = bundle(SensorMask::ALL, &cfg, 5);
        let (_, cache) = m.forward(&[&b]).unwrap();
        let g = m.backward(&cache, &Tensor::zeros(1, vec![2 * cfg.n_antennas])).unwrap();
        assert_eq!(g.len(), m.params().len());
        assert!(g.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_blocks_exist_only_for_present_branches() {
        let cfg = tiny_config();
        let mask = SensorMask {
            gps: false,
            rgb: true,
            lidar: false,
        };
        let m = build_local_model::<f64>(mask, &cfg, 0, 1).unwrap();
        let names = m.param_names();
        assert!(names.iter().all(|n| !n.starts_with("gps") && !n.starts_with("lidar")));
        assert!(names.iter().any(|n| n.starts_with("rgb")));
        let b = bundle(mask, &cfg, 5);
        let (_, cache) = m.forward(&[&b]).unwrap();
        let g = m.backward(&cache, &Tensor::zeros(1, vec![4])).unwrap();
        assert_eq!(g.len(), names.len());
    }

    /// Full branch + integration stack against central differences for
    /// every mask.
    #[test]
    fn local_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let eps = 1e-5;
        for bits in 0..8u8 {
            let mask = SensorMask::from_bits(bits);
            let m = build_local_model::<f64>(mask, &cfg, 2, 3).unwrap();
            let bundles: Vec<SensingBundle> = (0..3).map(|s| bundle(mask, &cfg, 10 + s)).collect();
            let refs: Vec<&SensingBundle> = bundles.iter().collect();
            let mut rng = rng_for(&[77, bits as u64]);
            let c: Vec<f64> = (0..3 * 2 * cfg.n_antennas).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probe = |m: &LocalModel<f64>| -> f64 {
                let (y, _) = m.forward_real(&refs).unwrap();
                y.data().iter().zip(&c).map(|(a, b)| a * b).sum()
            };
            let (y, cache) = m.forward_real(&refs).unwrap();
            let grads = m
                .backward(&cache, &Tensor::new(3, y.shape().to_vec(), c.clone()).unwrap())
                .unwrap();
            let sizes = m.block_sizes();
            let mut num = 0.0;
            let mut den = 0.0f64;
            for (blk, &len) in sizes.iter().enumerate() {
                for i in 0..len {
                    let mut p = m.clone();
                    p.params_mut()[blk][i] += eps;
                    let mut q = m.clone();
                    q.params_mut()[blk][i] -= eps;
                    let fd = (probe(&p) - probe(&q)) / (2.0 * eps);
                    num += (fd - grads[blk][i]).powi(2);
                    den += fd * fd;
                }
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-4, "mask {mask}: rel err {rel}");
        }
    }

    #[test]
    fn other_vehicle_parameters_do_not_leak() {
        let cfg = tiny_config();
        let a = build_local_model::<f64>(SensorMask::ALL, &cfg, 0, 1).unwrap();
        let mut b = build_local_model::<f64>(SensorMask::PILOT_ONLY, &cfg, 1, 1).unwrap();
        let ba = bundle(SensorMask::ALL, &cfg, 5);
        let before = a.forward(&[&ba]).unwrap().0;
        for blk in b.params_mut() {
            blk.fill(3.0);
        }
        assert_eq!(a.forward(&[&ba]).unwrap().0, before);
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let cfg = tiny_config();
        let mut m = build_local_model::<f64>(SensorMask::ALL, &cfg, 6, 2).unwrap();
        m.params_mut()[0][0] = 0.123;
        let bytes = m.to_checkpoint().to_bytes();
        let back = LocalModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &cfg, 2).unwrap();
        assert_eq!(back, m);
        let other = BranchConfig { l_g: 4, ..cfg };
        assert!(LocalModel::<f64>::from_checkpoint(&m.to_checkpoint(), &other, 2).is_err());
    }
}
