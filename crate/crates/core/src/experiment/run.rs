use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex;

use super::{join_rates, ExperimentConfig, MetricsRow, Precision, Scheme, Widths, METRICS_SCHEMA};
use crate::airlink::{enforce_power, user_rates, PrecodingMatrix, QuantizerConfig};
use crate::baselines::{mrt_precoder, random_precoder, wmmse_precoder, zf_precoder_served};
use crate::dataset::{Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::local_model::{BranchConfig, LocalModel};
use crate::nn::{AdamConfig, Checkpoint};
use crate::scalar::Scalar;
use crate::scene::{generate_scene, SceneConfig};
use crate::seeding::{rng_for, tag};
use crate::vfl::{
    compare_join, compute_loss, split_validation, train, CsiMode, EvalStats, Fleet, FleetConfig, JoinComparison, VehicleSpec,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub snr_db: f64,
    pub l_p: usize,
    pub seed: u64,
}

impl SweepPoint {
    pub fn key(&self) -> String {
        format!("k{}-snr{}-lp{}-seed{}", self.k, self.snr_db, self.l_p, self.seed)
    }
}

fn sweep(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &k in &cfg.k_list {
        for &snr_db in &cfg.snr_list {
            for &l_p in &cfg.l_p_list {
                for &seed in &cfg.seeds {
                    out.push(SweepPoint { k, snr_db, l_p, seed });
                }
            }
        }
    }
    out
}

/// Scenes of one sweep point and their fit/validation/test split.
pub struct PointData {
    pub point: SweepPoint,
    pub dataset: Dataset,
    pub branch: BranchConfig,
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PointData {
    pub fn build(cfg: &ExperimentConfig, point: SweepPoint) -> Result<Self> {
        let scene = generate_scene(&SceneConfig {
            rng_seed: point.seed,
            ..cfg.scene.clone()
        })?;
        let dcfg = DatasetConfig {
            k: point.k,
            l_p: point.l_p,
            snr_db: point.snr_db,
            seed: point.seed,
            ..cfg.dataset.clone()
        };
        let bev = (dcfg.bev.lx, dcfg.bev.ly, dcfg.bev.lz);
        let n = scene.n_antennas();
        let dataset = Dataset::generate(scene, dcfg, cfg.n_samples)?;
        let branch = match cfg.widths {
            Widths::Desk => BranchConfig::desk(n, point.l_p, bev),
            Widths::Full => BranchConfig::full(n, point.l_p, bev),
        };
        let n_test = (cfg.n_samples as f64 * cfg.test_fraction).round() as usize;
        let split = cfg.n_samples - n_test;
        let (fit, val) = split_validation(&(0..split).collect::<Vec<_>>(), cfg.train.val_fraction, point.seed);
        Ok(Self {
            point,
            dataset,
            branch,
            fit,
            val,
            test: (split..cfg.n_samples).collect(),
        })
    }

    pub fn train_indices(&self) -> Vec<usize> {
        let mut all = [self.fit.as_slice(), self.val.as_slice()].concat();
        all.sort_unstable();
        all
    }

    fn channels<T: Scalar>(&self, i: usize) -> Vec<Vec<Complex<T>>> {
        self.dataset.samples[i]
            .vehicles
            .iter()
            .map(|v| v.channel.iter().map(|z| Complex::new(T::of(z.re), T::of(z.im))).collect())
            .collect()
    }
}

pub struct SchemeOutcome<T> {
    pub scheme: Scheme,
    pub rows: Vec<MetricsRow>,
    /// Held-out metrics (feedback quantized for learned schemes).
    pub test: EvalStats,
    pub models: Vec<LocalModel<T>>,
}

fn row(p: &SweepPoint, scheme: Scheme, phase: &str) -> MetricsRow {
    MetricsRow {
        schema: METRICS_SCHEMA,
        scheme: scheme.id().to_string(),
        phase: phase.to_string(),
        k: p.k,
        snr_db: p.snr_db,
        l_p: p.l_p,
        bits: 0,
        seed: p.seed,
        epoch: 0,
        loss: 0.0,
        sum_rate: 0.0,
        min_rate: 0.0,
        user_rates: String::new(),
        uplink_bytes: 0,
        downlink_bytes: 0,
        cl_bytes: 0,
        wall_time: 0.0,
    }
}

fn fill(r: &mut MetricsRow, s: &EvalStats) {
    r.loss = s.loss;
    r.sum_rate = s.sum_rate;
    r.min_rate = s.min_rate;
    r.user_rates = join_rates(&s.user_rates);
}

/// Mean metrics of fixed precoders against ground-truth channels.
fn precoder_stats<T: Scalar>(data: &PointData, cfg: &ExperimentConfig, precoders: &[PrecodingMatrix<T>]) -> Result<EvalStats> {
    let k = data.point.k;
    let w = 1.0 / precoders.len() as f64;
    let noise = T::of(data.dataset.noise_var());
    let mut s = EvalStats {
        loss: 0.0,
        sum_rate: 0.0,
        min_rate: 0.0,
        user_rates: vec![0.0; k],
    };
    for (&i, v) in data.test.iter().zip(precoders) {
        let v = enforce_power(v, T::of(data.dataset.config.power));
        let rates = user_rates(&data.channels::<T>(i), &v, noise);
        s.loss += compute_loss(&rates, &cfg.loss)?.value.as_f64() * w;
        let mut min = f64::INFINITY;
        for (acc, r) in s.user_rates.iter_mut().zip(&rates) {
            *acc += r.as_f64() * w;
            s.sum_rate += r.as_f64() * w;
            min = min.min(r.as_f64());
        }
        s.min_rate += min * w;
    }
    Ok(s)
}

fn fleet_config(cfg: &ExperimentConfig, data: &PointData) -> FleetConfig {
    FleetConfig {
        transport: cfg.transport,
        threads: cfg.threads,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        loss: cfg.loss,
        power: data.dataset.config.power,
        noise_var: data.dataset.noise_var(),
        uplink: QuantizerConfig::bypass(),
        csi: CsiMode::GroundTruth,
        seed: data.point.seed,
    }
}

fn vehicle_specs(scheme: Scheme, cfg: &ExperimentConfig, k: usize) -> Result<Vec<VehicleSpec>> {
    let masks = scheme
        .masks(k, cfg.h_mvmm)
        .ok_or_else(|| Error::InvalidConfig(format!("{scheme} has no local models")))?;
    Ok(masks
        .into_iter()
        .enumerate()
        .map(|(i, mask)| VehicleSpec { id: i as u32, mask })
        .collect())
}

/// Runs one scheme on one sweep point: trains learned schemes, then
/// evaluates every scheme on the held-out scenes.
pub fn run_point<T: Scalar>(cfg: &ExperimentConfig, data: &PointData, scheme: Scheme) -> Result<SchemeOutcome<T>> {
    let start = Instant::now();
    let p = data.point;
    let power = T::of(data.dataset.config.power);
    if !scheme.is_learned() {
        let mut precoders = Vec::with_capacity(data.test.len());
        for &i in &data.test {
            let h = data.channels::<T>(i);
            let n = h[0].len();
            precoders.push(match scheme {
                Scheme::Zf => zf_precoder_served(&h, power)?.0,
                Scheme::Wmmse => wmmse_precoder(&h, power, T::of(data.dataset.noise_var()), &cfg.wmmse)?.v,
                Scheme::Mrt => mrt_precoder(&h, power)?.0,
                Scheme::Random => random_precoder(n, h.len(), power, &mut rng_for(&[tag::RANDOM_PRECODER, p.seed, i as u64])),
                _ => unreachable!("learned schemes handled below"),
            });
        }
        let test = precoder_stats(data, cfg, &precoders)?;
        let mut r = row(&p, scheme, "test");
        fill(&mut r, &test);
        r.wall_time = start.elapsed().as_secs_f64();
        return Ok(SchemeOutcome {
            scheme,
            rows: vec![r],
            test,
            models: Vec::new(),
        });
    }

    let specs = vehicle_specs(scheme, cfg, p.k)?;
    let mut fleet = Fleet::<T>::new(&data.dataset, &specs, &data.branch, p.seed, fleet_config(cfg, data))?;
    let tc = crate::vfl::TrainConfig {
        seed: p.seed,
        ..cfg.train.clone()
    };
    let mut rows = Vec::new();
    let report = train(&mut fleet, &data.fit, &data.val, &tc, |rec, _| {
        let mut r = row(&p, scheme, "epoch");
        r.epoch = rec.epoch;
        if let Some(v) = &rec.val {
            fill(&mut r, v);
        }
        r.loss = rec.train_loss;
        r.uplink_bytes = rec.uplink_bytes as u64;
        r.downlink_bytes = rec.downlink_bytes as u64;
        r.wall_time = rec.seconds;
        rows.push(r);
        Ok(())
    })?;
    let up: u64 = rows.iter().map(|r| r.uplink_bytes).sum();
    let down: u64 = rows.iter().map(|r| r.downlink_bytes).sum();
    let masks: Vec<_> = specs.iter().map(|s| s.mask).collect();
    let cl = data.dataset.centralized_bytes(&data.train_indices(), &masks) as u64;
    let mut test = None;
    for bits in [0, cfg.eval_bits] {
        let q = if bits == 0 {
            QuantizerConfig::bypass()
        } else {
            QuantizerConfig::new(bits)
        };
        let s = fleet.evaluate(&data.test, &q, cfg.train.eval_chunk)?;
        let mut r = row(&p, scheme, "test");
        fill(&mut r, &s);
        r.bits = bits;
        r.epoch = report.epochs();
        r.uplink_bytes = up;
        r.downlink_bytes = down;
        r.cl_bytes = cl;
        r.wall_time = start.elapsed().as_secs_f64();
        rows.push(r);
        test = Some(s);
    }
    Ok(SchemeOutcome {
        scheme,
        rows,
        test: test.expect("evaluated"),
        models: fleet.clients().iter().map(|c| c.model.clone()).collect(),
    })
}

fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

fn run_dir(cfg: &ExperimentConfig, p: &SweepPoint, scheme: Scheme) -> PathBuf {
    cfg.output_dir.join("runs").join(p.key()).join(scheme.id())
}

fn run_all<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let mut all = Vec::new();
    for p in sweep(cfg) {
        let pending = cfg.schemes.iter().any(|&s| !run_dir(cfg, &p, s).join("done").exists());
        let data = if pending {
            Some(PointData::build(cfg, p)?)
        } else {
            None
        };
        for &scheme in &cfg.schemes {
            let dir = run_dir(cfg, &p, scheme);
            if dir.join("done").exists() {
                log::info!("{} {scheme}: already complete", p.key());
                all.extend(read_rows(&dir.join("rows.csv"))?);
                continue;
            }
            log::info!("{} {scheme}: running", p.key());
            let out = run_point::<T>(cfg, data.as_ref().expect("built when pending"), scheme)?;
            fs::create_dir_all(&dir)?;
            for m in &out.models {
                m.to_checkpoint().save(&dir.join(format!("vehicle_{}.ckpt", m.vehicle_id)))?;
            }
            write_rows(&dir.join("rows.csv"), &out.rows)?;
            fs::write(dir.join("done"), b"")?;
            all.extend(out.rows);
        }
    }
    Ok(all)
}

/// Runs every (K, SNR, L_P, seed, scheme) combination, skipping ones a
/// previous invocation completed, and writes `metrics.csv` and
/// `summary.csv` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    let rows = match cfg.precision {
        Precision::F32 => run_all::<f32>(cfg)?,
        Precision::F64 => run_all::<f64>(cfg)?,
    };
    write_rows(&cfg.output_dir.join("metrics.csv"), &rows)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("summary.csv"))?;
    for s in summarize(&rows, cfg.eval_bits) {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub k: usize,
    pub snr_db: f64,
    pub l_p: usize,
    pub seeds: usize,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub mean_min_rate: f64,
    pub mean_epochs: f64,
}

/// Seed-averaged test metrics per (scheme, K, SNR, L_P); learned schemes
/// at `eval_bits` feedback.
pub fn summarize(rows: &[MetricsRow], eval_bits: u8) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    let learned = |s: &str| s.parse::<Scheme>().map(Scheme::is_learned).unwrap_or(false);
    for r in rows.iter().filter(|r| r.phase == "test") {
        if learned(&r.scheme) && r.bits != eval_bits {
            continue;
        }
        let pos = groups
            .iter()
            .position(|(g, _)| g.scheme == r.scheme && g.k == r.k && g.snr_db == r.snr_db && g.l_p == r.l_p);
        let (g, rates) = match pos {
            Some(i) => &mut groups[i],
            None => {
                groups.push((
                    SummaryRow {
                        scheme: r.scheme.clone(),
                        k: r.k,
                        snr_db: r.snr_db,
                        l_p: r.l_p,
                        seeds: 0,
                        mean_sum_rate: 0.0,
                        std_sum_rate: 0.0,
                        mean_min_rate: 0.0,
                        mean_epochs: 0.0,
                    },
                    Vec::new(),
                ));
                groups.last_mut().expect("pushed")
            }
        };
        g.seeds += 1;
        g.mean_min_rate += r.min_rate;
        g.mean_epochs += r.epoch as f64;
        rates.push(r.sum_rate);
    }
    groups
        .into_iter()
        .map(|(mut g, rates)| {
            let n = g.seeds as f64;
            g.mean_sum_rate = rates.iter().sum::<f64>() / n;
            g.std_sum_rate = (rates.iter().map(|r| (r - g.mean_sum_rate).powi(2)).sum::<f64>() / n).sqrt();
            g.mean_min_rate /= n;
            g.mean_epochs /= n;
            g
        })
        .collect()
}

fn eval_all<T: Scalar>(cfg: &ExperimentConfig, bits: u8) -> Result<Vec<MetricsRow>> {
    let q = if bits == 0 {
        QuantizerConfig::bypass()
    } else {
        QuantizerConfig::new(bits)
    };
    let mut rows = Vec::new();
    for p in sweep(cfg) {
        let learned: Vec<Scheme> = cfg
            .schemes
            .iter()
            .copied()
            .filter(|s| s.is_learned() && run_dir(cfg, &p, *s).join("done").exists())
            .collect();
        if learned.is_empty() {
            continue;
        }
        let data = PointData::build(cfg, p)?;
        for scheme in learned {
            let dir = run_dir(cfg, &p, scheme);
            let specs = vehicle_specs(scheme, cfg, p.k)?;
            let mut fleet = Fleet::<T>::new(&data.dataset, &specs, &data.branch, p.seed, fleet_config(cfg, &data))?;
            for s in &specs {
                let ckpt = Checkpoint::<T>::load(&dir.join(format!("vehicle_{}.ckpt", s.id)))?;
                let model = LocalModel::from_checkpoint(&ckpt, &data.branch, p.seed)?;
                *fleet.model_mut(s.id).ok_or(Error::UnknownVehicle(s.id))? = model;
            }
            let start = Instant::now();
            let s = fleet.evaluate(&data.test, &q, cfg.train.eval_chunk)?;
            let mut r = row(&p, scheme, "eval");
            fill(&mut r, &s);
            r.bits = bits;
            r.wall_time = start.elapsed().as_secs_f64();
            rows.push(r);
        }
    }
    Ok(rows)
}

/// Re-evaluates the saved models of every completed learned run with
/// `bits` feedback (`0` = unquantized) and writes `eval_b{bits}.csv`.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, bits: u8) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let rows = match cfg.precision {
        Precision::F32 => eval_all::<f32>(cfg, bits)?,
        Precision::F64 => eval_all::<f64>(cfg, bits)?,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    write_rows(&cfg.output_dir.join(format!("eval_b{bits}.csv")), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OnlineRow {
    pub seed: u64,
    pub k: usize,
    pub epoch: usize,
    pub warm_sum_rate: f64,
    pub cold_sum_rate: f64,
}

fn online_all<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<(SweepPoint, JoinComparison)>> {
    let scheme = cfg.schemes.iter().copied().find(|s| s.is_learned()).unwrap_or(Scheme::HMvmm);
    let mut out = Vec::new();
    for p in sweep(cfg) {
        if p.k < 2 {
            return Err(Error::InvalidConfig("a join needs K of at least 2".into()));
        }
        let data = PointData::build(cfg, p)?;
        let specs = vehicle_specs(scheme, cfg, p.k)?;
        let (before, joiner) = specs.split_at(p.k - 1);
        let tc = crate::vfl::TrainConfig {
            seed: p.seed,
            ..cfg.train.clone()
        };
        let cmp = compare_join::<T>(
            &data.dataset,
            &data.branch,
            before,
            joiner[0],
            &fleet_config(cfg, &data),
            &tc,
            &cfg.online,
            &data.train_indices(),
            &data.test,
            p.seed,
        )?;
        log::info!("{}: warm {} epochs, cold {} epochs", p.key(), cmp.warm_epochs, cmp.cold_epochs);
        out.push((p, cmp));
    }
    Ok(out)
}

/// Warm versus cold start after the last vehicle of each sweep point
/// joins; writes `online.csv` (per-epoch traces) and
/// `online_summary.csv` (epochs to the convergence threshold).
pub fn run_online(cfg: &ExperimentConfig) -> Result<Vec<(SweepPoint, JoinComparison)>> {
    cfg.validate()?;
    let out = match cfg.precision {
        Precision::F32 => online_all::<f32>(cfg)?,
        Precision::F64 => online_all::<f64>(cfg)?,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("online.csv"))?;
    for (p, c) in &out {
        for (epoch, (warm, cold)) in c.warm.sum_rates.iter().zip(&c.cold.sum_rates).enumerate() {
            w.serialize(OnlineRow {
                seed: p.seed,
                k: p.k,
                epoch,
                warm_sum_rate: *warm,
                cold_sum_rate: *cold,
            })?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("online_summary.csv"))?;
    w.write_record(["seed", "k", "snr_db", "l_p", "warm_epochs", "cold_epochs", "warm_final", "cold_final"])?;
    for (p, c) in &out {
        w.write_record([
            p.seed.to_string(),
            p.k.to_string(),
            p.snr_db.to_string(),
            p.l_p.to_string(),
            c.warm_epochs.to_string(),
            c.cold_epochs.to_string(),
            c.warm.final_rate().to_string(),
            c.cold.final_rate().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::HMvmmPolicy;

    fn tiny(dir: &Path, schemes: Vec<Scheme>) -> ExperimentConfig {
        ExperimentConfig {
            schemes,
            k_list: vec![2],
            l_p_list: vec![2],
            seeds: vec![1, 2],
            n_samples: 20,
            h_mvmm: HMvmmPolicy::Mixed,
            scene: SceneConfig {
                n_v: 2,
                n_h: 2,
                ..SceneConfig::default()
            },
            train: crate::vfl::TrainConfig {
                max_epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn baseline_only_run_has_one_row_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_experiment(&tiny(dir.path(), vec![Scheme::Zf])).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.phase == "test" && r.epoch == 0 && r.sum_rate > 0.0));
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn reruns_reuse_completed_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), vec![Scheme::UniPilot, Scheme::Mrt]);
        let first = run_experiment(&cfg).unwrap();
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(first, again);
        // Two epoch rows and two test rows per learned run.
        assert_eq!(first.iter().filter(|r| r.scheme == "uni-pilot").count(), 2 * 4);
        let eval = evaluate_checkpoints(&cfg, 0).unwrap();
        for e in &eval {
            let t = first
                .iter()
                .find(|r| r.phase == "test" && r.bits == 0 && r.seed == e.seed && r.scheme == e.scheme)
                .unwrap();
            assert_eq!(e.sum_rate, t.sum_rate);
        }
    }

    #[test]
    fn summaries_average_over_seeds() {
        let mk = |seed, rate| MetricsRow {
            sum_rate: rate,
            ..row(&SweepPoint { k: 3, snr_db: 30.0, l_p: 4, seed }, Scheme::Zf, "test")
        };
        let s = summarize(&[mk(1, 2.0), mk(2, 4.0)], 2);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].seeds, s[0].mean_sum_rate, s[0].std_sum_rate), (2, 3.0, 1.0));
    }
}
