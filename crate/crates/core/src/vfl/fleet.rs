use std::collections::BTreeMap;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::messages::{Body, Message, QuantizedSample};
use super::server::{server_step, ServerStep};
use super::transport::{connect, Endpoint, TransportKind};
use crate::airlink::{dequantize, estimate_channel, eta, eta_inv, quantize, unpack_codes, Feedback, QuantizerConfig};
use crate::dataset::{mask_bundle, Dataset};
use crate::error::{Error, Result};
use crate::local_model::{build_local_model, BranchConfig, LocalCache, LocalModel};
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::preprocess::SensingBundle;
use crate::scalar::Scalar;
use crate::scene::SensorMask;
use crate::seeding::{rng_for, tag};

/// Channel knowledge the BS uses when evaluating the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum CsiMode {
    #[default]
    GroundTruth,
    /// `ĥ = h + e` with `‖e‖²/‖h‖² = 10^(nmse_db/10)`.
    Estimated { nmse_db: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub transport: TransportKind,
    /// Worker threads for client computation.
    pub threads: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub power: f64,
    pub noise_var: f64,
    /// Uplink feedback during training.
    pub uplink: QuantizerConfig,
    pub csi: CsiMode,
    /// Seed for the CSI-error stream.
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            transport: TransportKind::InProcess,
            threads: 1,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            power: 1.0,
            noise_var: 1e-3,
            uplink: QuantizerConfig::bypass(),
            csi: CsiMode::GroundTruth,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: u32,
    pub mask: SensorMask,
}

/// One vehicle: its own sensing data, model and optimizer.
pub struct Client<T> {
    pub id: u32,
    pub model: LocalModel<T>,
    pub adam: AdamState<T>,
    bundles: Vec<SensingBundle>,
    endpoint: Box<dyn Endpoint>,
    cache: Option<LocalCache<T>>,
    pending: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Client<T> {
    fn batch(&self, idx: &[usize]) -> Vec<&SensingBundle> {
        idx.iter().map(|&i| &self.bundles[i]).collect()
    }

    /// Forward pass and uplink message for a batch; keeps the cache when
    /// `keep_cache` is set.
    fn uplink(&mut self, idx: &[usize], quant: &QuantizerConfig, keep_cache: bool) -> Result<Message> {
        let (out, cache) = self.model.forward_real(&self.batch(idx))?;
        if keep_cache {
            self.cache = Some(cache);
        }
        encode_uplink(self.id, &out, quant)
    }

    fn receive_gradient(&mut self, batch: usize) -> Result<()> {
        let msg = self.endpoint.recv()?;
        if msg.vehicle != self.id {
            return Err(Error::Protocol(format!("vehicle {} got a message for {}", self.id, msg.vehicle)));
        }
        let Body::Downlink(g) = msg.body else {
            return Err(Error::Protocol("expected a downlink gradient".into()));
        };
        let width = 2 * self.model.config.n_antennas;
        if g.len() != batch * width {
            return Err(Error::Protocol(format!("gradient has {} values, expected {}", g.len(), batch * width)));
        }
        let grad = Tensor::new(batch, vec![width], g.iter().map(|&x| T::of(x as f64)).collect())?;
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Protocol("gradient arrived without a forward pass".into()))?;
        self.pending = Some(self.model.backward(cache, &grad)?);
        Ok(())
    }

    fn apply(&mut self) {
        if let Some(g) = self.pending.take() {
            self.model.apply_gradients(&mut self.adam, &g);
        }
        self.cache = None;
    }

    pub fn bundle(&self, i: usize) -> &SensingBundle {
        &self.bundles[i]
    }
}

/// Wire form of a batch of real outputs (`Re ++ Im` per sample).
pub fn encode_uplink<T: Scalar>(id: u32, out: &Tensor<T>, quant: &QuantizerConfig) -> Result<Message> {
    let body = if quant.training_bypass {
        Body::UplinkRaw(out.data().iter().map(|x| x.as_f64() as f32).collect())
    } else {
        let mut samples = Vec::with_capacity(out.batch());
        for b in 0..out.batch() {
            let v = eta(out.sample(b))?;
            let fb = quantize(&v, quant)?;
            let Feedback::Quantized { norm, .. } = &fb else {
                unreachable!("bypass handled above")
            };
            samples.push(QuantizedSample {
                norm: norm.as_f64() as f32,
                packed: fb.packed_codes(),
            });
        }
        Body::UplinkQuantized {
            bits: quant.bits,
            n_reals: out.sample_len() as u16,
            samples,
        }
    };
    Ok(Message { vehicle: id, body })
}

/// Server-side reconstruction of one vehicle's vectors from its uplink.
pub fn decode_uplink<T: Scalar>(msg: &Message, n_antennas: usize, batch: usize) -> Result<Vec<Vec<Complex<T>>>> {
    let width = 2 * n_antennas;
    match &msg.body {
        Body::UplinkRaw(x) => {
            if x.len() != batch * width {
                return Err(Error::Protocol(format!("uplink has {} values, expected {}", x.len(), batch * width)));
            }
            x.chunks_exact(width)
                .map(|c| eta(&c.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>()))
                .collect()
        }
        Body::UplinkQuantized { bits, n_reals, samples } => {
            if *n_reals as usize != width || samples.len() != batch {
                return Err(Error::Protocol("quantized uplink has the wrong shape".into()));
            }
            samples
                .iter()
                .map(|s| {
                    let fb = Feedback::Quantized {
                        bits: *bits,
                        n: n_antennas,
                        norm: T::of(s.norm as f64),
                        codes: unpack_codes(&s.packed, *bits, width)?,
                    };
                    dequantize(&fb)
                })
                .collect()
        }
        Body::Downlink(_) => Err(Error::Protocol("expected an uplink".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub iteration: u64,
    pub vehicle: u32,
    pub uplink: bool,
    pub bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub loss: f64,
    pub sum_rate: f64,
    pub batch: usize,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub sum_rate: f64,
    pub min_rate: f64,
    pub user_rates: Vec<f64>,
}

/// Snapshot of every client's parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct FleetSnapshot<T> {
    models: Vec<(u32, LocalModel<T>, AdamState<T>)>,
}

pub struct Fleet<T> {
    clients: Vec<Client<T>>,
    servers: BTreeMap<u32, Box<dyn Endpoint>>,
    pool: rayon::ThreadPool,
    pub config: FleetConfig,
    branch: BranchConfig,
    n_antennas: usize,
    /// `[sample][vehicle slot]` channels used for the loss.
    train_channels: Vec<Vec<Vec<Complex<f64>>>>,
    /// `[sample][vehicle slot]` ground truth for evaluation.
    gt_channels: Vec<Vec<Vec<Complex<f64>>>>,
    iteration: u64,
    trace: Vec<TraceEntry>,
    pub aborted_rounds: usize,
}

fn training_channels(gt: &[Vec<Vec<Complex<f64>>>], mode: CsiMode, seed: u64) -> Vec<Vec<Vec<Complex<f64>>>> {
    match mode {
        CsiMode::GroundTruth => gt.to_vec(),
        CsiMode::Estimated { nmse_db } => {
            let nmse = 10f64.powf(nmse_db / 10.0);
            gt.iter()
                .enumerate()
                .map(|(i, s)| {
                    s.iter()
                        .enumerate()
                        .map(|(k, h)| estimate_channel(h, nmse, &mut rng_for(&[tag::CSI_ERROR, seed, i as u64, k as u64])))
                        .collect()
                })
                .collect()
        }
    }
}

fn parallel_all<T, F>(pool: &rayon::ThreadPool, clients: &mut [Client<T>], f: F) -> Vec<Result<()>>
where
    T: Scalar,
    F: Fn(&mut Client<T>) -> Result<()> + Sync,
{
    pool.install(|| clients.par_iter_mut().map(|c| f(c)).collect())
}

impl<T: Scalar> Fleet<T> {
    pub fn new(dataset: &Dataset, vehicles: &[VehicleSpec], branch: &BranchConfig, seed: u64, config: FleetConfig) -> Result<Self> {
        if vehicles.is_empty() {
            return Err(Error::InvalidConfig("a fleet needs at least one vehicle".into()));
        }
        config.loss.validate()?;
        let n_antennas = dataset.scene.n_antennas();
        if branch.n_antennas != n_antennas || branch.l_p != dataset.config.l_p {
            return Err(Error::InvalidConfig("branch configuration disagrees with the dataset".into()));
        }
        let gt: Vec<Vec<Vec<Complex<f64>>>> = dataset
            .samples
            .iter()
            .map(|s| s.vehicles.iter().map(|v| v.channel.clone()).collect())
            .collect();
        let train_channels = training_channels(&gt, config.csi, config.seed);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let mut fleet = Self {
            clients: Vec::new(),
            servers: BTreeMap::new(),
            pool,
            config,
            branch: *branch,
            n_antennas,
            train_channels,
            gt_channels: gt,
            iteration: 0,
            trace: Vec::new(),
            aborted_rounds: 0,
        };
        for v in vehicles {
            fleet.join(dataset, *v, seed)?;
        }
        Ok(fleet)
    }

    /// Adds a vehicle with a freshly initialized model.
    pub fn join(&mut self, dataset: &Dataset, spec: VehicleSpec, seed: u64) -> Result<()> {
        if spec.id as usize >= dataset.config.k {
            return Err(Error::UnknownVehicle(spec.id));
        }
        if self.servers.contains_key(&spec.id) {
            return Err(Error::InvalidConfig(format!("vehicle {} already joined", spec.id)));
        }
        let model = build_local_model::<T>(spec.mask, &self.branch, spec.id, seed)?;
        let adam = model.new_optimizer(self.config.adam);
        let bundles = dataset
            .samples
            .iter()
            .map(|s| mask_bundle(&s.vehicles[spec.id as usize].bundle, spec.mask))
            .collect();
        let link = connect(self.config.transport)?;
        self.clients.push(Client {
            id: spec.id,
            model,
            adam,
            bundles,
            endpoint: link.client,
            cache: None,
            pending: None,
        });
        self.clients.sort_by_key(|c| c.id);
        self.servers.insert(spec.id, link.server);
        Ok(())
    }

    pub fn leave(&mut self, id: u32) -> Result<LocalModel<T>> {
        let pos = self
            .clients
            .iter()
            .position(|c| c.id == id)
            .ok_or(Error::UnknownVehicle(id))?;
        self.servers.remove(&id);
        Ok(self.clients.remove(pos).model)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.clients.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn clients(&self) -> &[Client<T>] {
        &self.clients
    }

    pub fn model(&self, id: u32) -> Option<&LocalModel<T>> {
        self.clients.iter().find(|c| c.id == id).map(|c| &c.model)
    }

    pub fn model_mut(&mut self, id: u32) -> Option<&mut LocalModel<T>> {
        self.clients.iter_mut().find(|c| c.id == id).map(|c| &mut c.model)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    /// Replaces the endpoint pair of one vehicle, e.g. with a fault-injecting
    /// wrapper.
    pub fn wrap_endpoints<F, G>(&mut self, id: u32, client: F, server: G) -> Result<()>
    where
        F: FnOnce(Box<dyn Endpoint>) -> Box<dyn Endpoint>,
        G: FnOnce(Box<dyn Endpoint>) -> Box<dyn Endpoint>,
    {
        let c = self.clients.iter_mut().find(|c| c.id == id).ok_or(Error::UnknownVehicle(id))?;
        let placeholder = connect(TransportKind::InProcess)?;
        let old = std::mem::replace(&mut c.endpoint, placeholder.client);
        c.endpoint = client(old);
        let s = self.servers.get_mut(&id).ok_or(Error::UnknownVehicle(id))?;
        let old = std::mem::replace(s, placeholder.server);
        *s = server(old);
        Ok(())
    }

    /// Messages of committed iterations since the last [`Fleet::take_trace`].
    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        std::mem::take(&mut self.trace)
    }

    fn channels_t(source: &[Vec<Vec<Complex<f64>>>], idx: &[usize], ids: &[u32]) -> Vec<Vec<Vec<Complex<T>>>> {
        idx.iter()
            .map(|&i| {
                ids.iter()
                    .map(|&k| {
                        source[i][k as usize]
                            .iter()
                            .map(|z| Complex::new(T::of(z.re), T::of(z.im)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// One protocol iteration on the minibatch `idx`. A transport failure
    /// aborts the round cleanly; it is retried once before the error is
    /// returned.
    pub fn train_iteration(&mut self, idx: &[usize]) -> Result<IterationStats> {
        match self.try_iteration(idx) {
            Err(Error::Transport(first)) => {
                self.aborted_rounds += 1;
                log::warn!("round aborted ({first}); retrying once");
                self.try_iteration(idx)
                    .map_err(|e| Error::Transport(format!("retry failed after '{first}': {e}")))
            }
            other => other,
        }
    }

    fn try_iteration(&mut self, idx: &[usize]) -> Result<IterationStats> {
        if idx.is_empty() {
            return Err(Error::InvalidConfig("empty minibatch".into()));
        }
        let batch = idx.len();
        let quant = self.config.uplink;

        // Uplink: every vehicle computes and sends its outputs.
        let sent: Vec<Result<usize>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .map(|c| {
                    let msg = c.uplink(idx, &quant, true)?;
                    c.endpoint.send(&msg)
                })
                .collect()
        });
        if let Some(pos) = sent.iter().position(Result::is_err) {
            for (c, r) in self.clients.iter_mut().zip(&sent) {
                c.cache = None;
                if r.is_ok() {
                    self.servers.get_mut(&c.id).expect("server endpoint").recv()?;
                }
            }
            return Err(sent.into_iter().nth(pos).expect("error present").unwrap_err());
        }
        let up_bytes: Vec<usize> = sent.into_iter().map(|r| r.expect("checked")).collect();

        // Server: reconstruct V in vehicle-id order and differentiate.
        let ids = self.ids();
        let mut outputs = Vec::with_capacity(ids.len());
        for id in &ids {
            let msg = self.servers.get_mut(id).expect("server endpoint").recv()?;
            if msg.vehicle != *id {
                return Err(Error::Protocol(format!("uplink from {} on the link of {id}", msg.vehicle)));
            }
            outputs.push(decode_uplink::<T>(&msg, self.n_antennas, batch)?);
        }
        let channels = Self::channels_t(&self.train_channels, idx, &ids);
        let step = server_step(
            &outputs,
            &channels,
            T::of(self.config.power),
            T::of(self.config.noise_var),
            &self.config.loss,
            true,
        )?;

        // Downlink: one gradient message per vehicle.
        let mut down_bytes = Vec::with_capacity(ids.len());
        for (j, (id, g)) in ids.iter().zip(&step.grads).enumerate() {
            let flat: Vec<f32> = g.iter().flat_map(|s| eta_inv(s)).map(|x| x.as_f64() as f32).collect();
            let msg = Message {
                vehicle: *id,
                body: Body::Downlink(flat),
            };
            match self.servers.get_mut(id).expect("server endpoint").send(&msg) {
                Ok(n) => down_bytes.push(n),
                Err(e) => {
                    for c in self.clients.iter_mut() {
                        c.cache = None;
                    }
                    for c in self.clients.iter_mut().take(j) {
                        c.endpoint.recv()?;
                    }
                    return Err(e);
                }
            }
        }

        // Clients backpropagate, then all apply their updates together.
        let results = parallel_all(&self.pool, &mut self.clients, |c| c.receive_gradient(batch));
        if let Some(e) = results.into_iter().find_map(Result::err) {
            for c in self.clients.iter_mut() {
                c.cache = None;
                c.pending = None;
            }
            return Err(e);
        }
        parallel_all(&self.pool, &mut self.clients, |c| {
            c.apply();
            Ok(())
        });

        for ((id, u), d) in ids.iter().zip(&up_bytes).zip(&down_bytes) {
            self.trace.push(TraceEntry {
                iteration: self.iteration,
                vehicle: *id,
                uplink: true,
                bytes: *u,
            });
            self.trace.push(TraceEntry {
                iteration: self.iteration,
                vehicle: *id,
                uplink: false,
                bytes: *d,
            });
        }
        self.iteration += 1;
        Ok(IterationStats {
            loss: step.loss.as_f64(),
            sum_rate: step.sum_rate.as_f64(),
            batch,
            uplink_bytes: up_bytes.iter().sum(),
            downlink_bytes: down_bytes.iter().sum(),
            clamped: step.clamped,
        })
    }

    /// Evaluates the current models on `idx` against ground-truth channels,
    /// with the uplink encoded as configured by `quant`. No parameters
    /// change and nothing crosses the links.
    pub fn evaluate(&mut self, idx: &[usize], quant: &QuantizerConfig, chunk: usize) -> Result<EvalStats> {
        self.evaluate_on(idx, quant, chunk, false)
    }

    /// As [`Fleet::evaluate`], with the training-time channel knowledge.
    pub fn evaluate_train_csi(&mut self, idx: &[usize], quant: &QuantizerConfig, chunk: usize) -> Result<EvalStats> {
        self.evaluate_on(idx, quant, chunk, true)
    }

    fn evaluate_on(&mut self, idx: &[usize], quant: &QuantizerConfig, chunk: usize, train_csi: bool) -> Result<EvalStats> {
        if idx.is_empty() {
            return Err(Error::InvalidConfig("empty evaluation set".into()));
        }
        let ids = self.ids();
        let n = self.n_antennas;
        let mut acc = EvalStats {
            loss: 0.0,
            sum_rate: 0.0,
            min_rate: 0.0,
            user_rates: vec![0.0; ids.len()],
        };
        for part in idx.chunks(chunk.max(1)) {
            let msgs: Vec<Result<Message>> = self
                .pool
                .install(|| self.clients.par_iter_mut().map(|c| c.uplink(part, quant, false)).collect());
            let outputs = msgs
                .into_iter()
                .map(|m| decode_uplink::<T>(&m?, n, part.len()))
                .collect::<Result<Vec<_>>>()?;
            let source = if train_csi { &self.train_channels } else { &self.gt_channels };
            let channels = Self::channels_t(source, part, &ids);
            let s: ServerStep<T> = server_step(
                &outputs,
                &channels,
                T::of(self.config.power),
                T::of(self.config.noise_var),
                &self.config.loss,
                false,
            )?;
            let w = part.len() as f64 / idx.len() as f64;
            acc.loss += s.loss.as_f64() * w;
            acc.sum_rate += s.sum_rate.as_f64() * w;
            acc.min_rate += s.min_rate.as_f64() * w;
            for (a, r) in acc.user_rates.iter_mut().zip(&s.user_rates) {
                *a += r.as_f64() * w;
            }
        }
        Ok(acc)
    }

    /// Per-sample precoders `[sample][user]` for `idx`, after uplink encoding
    /// and power projection, in vehicle-id order.
    pub fn precoders(&mut self, idx: &[usize], quant: &QuantizerConfig) -> Result<Vec<Vec<Vec<Complex<T>>>>> {
        let n = self.n_antennas;
        let msgs: Vec<Result<Message>> = self
            .pool
            .install(|| self.clients.par_iter_mut().map(|c| c.uplink(idx, quant, false)).collect());
        let outputs = msgs
            .into_iter()
            .map(|m| decode_uplink::<T>(&m?, n, idx.len()))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..idx.len())
            .map(|b| {
                let cols: Vec<Vec<Complex<T>>> = outputs.iter().map(|o| o[b].clone()).collect();
                let v = crate::airlink::enforce_power(
                    &crate::airlink::PrecodingMatrix::from_columns(&cols),
                    T::of(self.config.power),
                );
                v.0.columns().map(|c| c.to_vec()).collect()
            })
            .collect())
    }

    pub fn snapshot(&self) -> FleetSnapshot<T> {
        FleetSnapshot {
            models: self
                .clients
                .iter()
                .map(|c| (c.id, c.model.clone(), c.adam.clone()))
                .collect(),
        }
    }

    /// Restores parameters and optimizer state for every vehicle present in
    /// both the snapshot and the fleet.
    pub fn restore(&mut self, snap: &FleetSnapshot<T>) {
        for (id, model, adam) in &snap.models {
            if let Some(c) = self.clients.iter_mut().find(|c| c.id == *id) {
                c.model = model.clone();
                c.adam = adam.clone();
            }
        }
    }

    /// Switches the channel knowledge used for the training loss.
    pub fn set_csi(&mut self, mode: CsiMode) {
        self.config.csi = mode;
        self.train_channels = training_channels(&self.gt_channels, mode, self.config.seed);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.adam.lr = lr;
        for c in &mut self.clients {
            c.adam.config.lr = lr;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};
    use crate::vfl::accounting::iteration_bytes;
    use crate::vfl::transport::FaultyEndpoint;

    fn tiny(k: usize, n_samples: usize) -> (Dataset, BranchConfig) {
        let scene = generate_scene(&SceneConfig {
            n_v: 2,
            n_h: 2,
            ..SceneConfig::default()
        })
        .unwrap();
        let cfg = crate::dataset::DatasetConfig {
            k,
            l_p: 2,
            ..Default::default()
        };
        let bev = (cfg.bev.lx, cfg.bev.ly, cfg.bev.lz);
        let ds = Dataset::generate(scene, cfg, n_samples).unwrap();
        (ds, BranchConfig::desk(4, 2, bev))
    }

    fn specs(masks: &[SensorMask]) -> Vec<VehicleSpec> {
        masks
            .iter()
            .enumerate()
            .map(|(i, &mask)| VehicleSpec { id: i as u32, mask })
            .collect()
    }

    fn fleet(ds: &Dataset, branch: &BranchConfig, config: FleetConfig) -> Fleet<f64> {
        let masks = [SensorMask::ALL, SensorMask::PILOT_ONLY, SensorMask::from_bits(0b001)];
        Fleet::new(ds, &specs(&masks[..ds.config.k]), branch, 3, FleetConfig {
            noise_var: ds.noise_var(),
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            ..config
        })
        .unwrap()
    }

    fn params(f: &Fleet<f64>) -> Vec<Vec<f64>> {
        f.clients().iter().flat_map(|c| c.model.params()).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn every_vehicle_exchanges_one_message_each_way_per_iteration() {
        let (ds, branch) = tiny(3, 8);
        let mut f = fleet(&ds, &branch, FleetConfig::default());
        f.train_iteration(&[0, 1, 2]).unwrap();
        f.train_iteration(&[3, 4]).unwrap();
        let trace = f.take_trace();
        for it in 0..2u64 {
            for id in 0..3u32 {
                let of = |up: bool| trace.iter().filter(|e| e.iteration == it && e.vehicle == id && e.uplink == up).count();
                assert_eq!((of(true), of(false)), (1, 1));
            }
        }
        let total: usize = trace.iter().map(|e| e.bytes).sum();
        let bypass = QuantizerConfig::bypass();
        assert_eq!(total, iteration_bytes(4, 3, 3, &bypass) + iteration_bytes(4, 3, 2, &bypass));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (ds, branch) = tiny(2, 4);
        let mut f = fleet(&ds, &branch, FleetConfig::default());
        f.set_learning_rate(0.0);
        let before = params(&f);
        let s = f.train_iteration(&[0, 1, 2, 3]).unwrap();
        assert!(s.loss.is_finite());
        assert_eq!(params(&f), before);
    }

    #[test]
    fn transports_and_thread_counts_agree_bitwise() {
        let (ds, branch) = tiny(3, 6);
        let run = |transport, threads| {
            let mut f = fleet(&ds, &branch, FleetConfig {
                transport,
                threads,
                ..Default::default()
            });
            let losses: Vec<f64> = (0..3).map(|i| f.train_iteration(&[i, i + 3]).unwrap().loss).collect();
            (losses, params(&f))
        };
        let base = run(TransportKind::InProcess, 1);
        assert_eq!(run(TransportKind::UnixSocket, 1), base);
        assert_eq!(run(TransportKind::InProcess, 3), base);
    }

    #[test]
    fn dropped_messages_abort_the_round_and_retry_once() {
        let (ds, branch) = tiny(2, 4);
        let mut clean = fleet(&ds, &branch, FleetConfig::default());
        clean.train_iteration(&[0, 1]).unwrap();

        let mut up = fleet(&ds, &branch, FleetConfig::default());
        up.wrap_endpoints(1, |e| Box::new(FaultyEndpoint::new(e, [0])), |e| e).unwrap();
        up.train_iteration(&[0, 1]).unwrap();
        assert_eq!(up.aborted_rounds, 1);
        assert_eq!(params(&up), params(&clean));
        assert_eq!(up.take_trace().len(), 4);

        let mut down = fleet(&ds, &branch, FleetConfig::default());
        down.wrap_endpoints(1, |e| e, |e| Box::new(FaultyEndpoint::new(e, [0]))).unwrap();
        down.train_iteration(&[0, 1]).unwrap();
        assert_eq!(params(&down), params(&clean));

        let mut dead = fleet(&ds, &branch, FleetConfig::default());
        dead.wrap_endpoints(0, |e| Box::new(FaultyEndpoint::new(e, [0, 1])), |e| e).unwrap();
        assert!(matches!(dead.train_iteration(&[0, 1]), Err(Error::Transport(_))));
    }

    #[test]
    fn join_then_leave_restores_the_fleet() {
        let (ds, branch) = tiny(3, 4);
        let masks = [SensorMask::ALL, SensorMask::PILOT_ONLY];
        let mut f = Fleet::<f64>::new(&ds, &specs(&masks), &branch, 3, FleetConfig::default()).unwrap();
        let before = params(&f);
        f.join(&ds, VehicleSpec { id: 2, mask: SensorMask::ALL }, 3).unwrap();
        assert_eq!(f.ids(), vec![0, 1, 2]);
        f.leave(2).unwrap();
        assert_eq!(params(&f), before);
        assert!(matches!(f.leave(9), Err(Error::UnknownVehicle(9))));
        assert!(f.join(&ds, VehicleSpec { id: 0, mask: SensorMask::ALL }, 3).is_err());
    }

    #[test]
    fn quantized_uplink_round_trips_through_the_wire() {
        let (ds, branch) = tiny(2, 3);
        let f = fleet(&ds, &branch, FleetConfig::default());
        let c = &f.clients()[0];
        let bundles = [c.bundle(0), c.bundle(1)];
        let (out, _) = c.model.forward_real(&bundles).unwrap();
        let q = QuantizerConfig::new(2);
        let msg = encode_uplink(0, &out, &q).unwrap();
        assert_eq!(msg.encoded_len(), crate::vfl::accounting::uplink_frame_bytes(4, 2, &q));
        let back = decode_uplink::<f64>(&Message::decode(&msg.encode()).unwrap(), 4, 2).unwrap();
        for (b, v) in back.iter().enumerate() {
            let direct = dequantize(&quantize(&eta(out.sample(b)).unwrap(), &q).unwrap()).unwrap();
            for (x, y) in v.iter().zip(&direct) {
                assert!((x - y).norm() <= 1e-6 * y.norm().max(1.0));
            }
        }
        let raw = decode_uplink::<f64>(&encode_uplink(0, &out, &QuantizerConfig::bypass()).unwrap(), 4, 2).unwrap();
        assert_eq!(eta_inv(&raw[0]).iter().map(|x| *x as f32).collect::<Vec<_>>(), out.sample(0).iter().map(|x| *x as f32).collect::<Vec<_>>());
    }

    #[test]
    fn estimated_csi_changes_only_the_training_channels() {
        let (ds, branch) = tiny(2, 4);
        let mut f = fleet(&ds, &branch, FleetConfig::default());
        let gt = f.evaluate(&[0, 1, 2, 3], &QuantizerConfig::bypass(), 4).unwrap();
        f.set_csi(CsiMode::Estimated { nmse_db: -30.0 });
        assert_eq!(f.evaluate(&[0, 1, 2, 3], &QuantizerConfig::bypass(), 4).unwrap(), gt);
        let est = f.evaluate_train_csi(&[0, 1, 2, 3], &QuantizerConfig::bypass(), 4).unwrap();
        assert_ne!(est.sum_rate, gt.sum_rate);
        assert!((est.sum_rate - gt.sum_rate).abs() < 0.1 * gt.sum_rate);
    }
}
