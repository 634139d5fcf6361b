//! Experiment orchestration: schemes, sweeps, metric logs, accounting.

mod report;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::WmmseConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::scene::{SceneConfig, SensorMask};
use crate::vfl::{LossConfig, OnlineConfig, TrainConfig, TransportKind};

pub use report::{accounting_report, read_metrics, write_report, AccountingRow};
pub use run::{
    evaluate_checkpoints, run_experiment, run_online, run_point, summarize, OnlineRow, PointData, SchemeOutcome, SummaryRow, SweepPoint,
};

/// Version of the metrics CSV layout.
pub const METRICS_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    UniPilot,
    PilotGps,
    PilotRgb,
    PilotLidar,
    HMvmm,
    Zf,
    Wmmse,
    Mrt,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::UniPilot,
        Scheme::PilotGps,
        Scheme::PilotRgb,
        Scheme::PilotLidar,
        Scheme::HMvmm,
        Scheme::Zf,
        Scheme::Wmmse,
        Scheme::Mrt,
        Scheme::Random,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Scheme::UniPilot => "uni-pilot",
            Scheme::PilotGps => "pilot-gps",
            Scheme::PilotRgb => "pilot-rgb",
            Scheme::PilotLidar => "pilot-lidar",
            Scheme::HMvmm => "h-mvmm",
            Scheme::Zf => "zf",
            Scheme::Wmmse => "wmmse",
            Scheme::Mrt => "mrt",
            Scheme::Random => "random",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Scheme::UniPilot | Scheme::PilotGps | Scheme::PilotRgb | Scheme::PilotLidar | Scheme::HMvmm
        )
    }

    /// Sensor masks of vehicles `0..k`; `None` for non-learned schemes.
    pub fn masks(self, k: usize, policy: HMvmmPolicy) -> Option<Vec<SensorMask>> {
        let uniform = |gps, rgb, lidar| Some(vec![SensorMask { gps, rgb, lidar }; k]);
        match self {
            Scheme::UniPilot => uniform(false, false, false),
            Scheme::PilotGps => uniform(true, false, false),
            Scheme::PilotRgb => uniform(false, true, false),
            Scheme::PilotLidar => uniform(false, false, true),
            Scheme::HMvmm => Some((0..k).map(|i| policy.mask(i)).collect()),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// Sensor assignment in the heterogeneous scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HMvmmPolicy {
    /// Seven-vehicle pattern with 5 GPS, 3 camera and 3 LiDAR carriers,
    /// repeated for larger fleets.
    #[default]
    Mixed,
    AllSensors,
}

impl HMvmmPolicy {
    pub fn mask(self, vehicle: usize) -> SensorMask {
        const PATTERN: [(bool, bool, bool); 7] = [
            (true, true, true),
            (true, true, false),
            (true, false, true),
            (true, false, false),
            (true, false, false),
            (false, true, true),
            (false, false, false),
        ];
        match self {
            HMvmmPolicy::AllSensors => SensorMask::ALL,
            HMvmmPolicy::Mixed => {
                let (gps, rgb, lidar) = PATTERN[vehicle % 7];
                SensorMask { gps, rgb, lidar }
            }
        }
    }
}

/// Feature widths of the local models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Widths {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schemes: Vec<Scheme>,
    pub k_list: Vec<usize>,
    pub snr_list: Vec<f64>,
    pub l_p_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Scenes generated per sweep point.
    pub n_samples: usize,
    /// Trailing share of the scenes held out for testing.
    pub test_fraction: f64,
    /// Feedback bits at test time.
    pub eval_bits: u8,
    pub h_mvmm: HMvmmPolicy,
    pub widths: Widths,
    pub precision: Precision,
    pub lr: f64,
    pub loss: LossConfig,
    pub transport: TransportKind,
    pub threads: usize,
    pub train: TrainConfig,
    pub wmmse: WmmseConfig,
    pub online: OnlineConfig,
    /// Geometry template; the seed and array size come from the sweep.
    pub scene: SceneConfig,
    /// Sensing template; K, L_P, SNR and seed come from the sweep.
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            k_list: vec![3],
            snr_list: vec![30.0],
            l_p_list: vec![4],
            seeds: vec![1],
            n_samples: 2000,
            test_fraction: 0.2,
            eval_bits: 2,
            h_mvmm: HMvmmPolicy::Mixed,
            widths: Widths::Desk,
            precision: Precision::F64,
            lr: 1e-3,
            loss: LossConfig::default(),
            transport: TransportKind::InProcess,
            threads: 1,
            train: TrainConfig::default(),
            wmmse: WmmseConfig::default(),
            online: OnlineConfig::default(),
            scene: SceneConfig {
                n_v: 4,
                n_h: 4,
                ..SceneConfig::default()
            },
            dataset: DatasetConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.schemes.is_empty() {
            return bad("no schemes selected");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.k_list.is_empty() || self.snr_list.is_empty() || self.l_p_list.is_empty() {
            return bad("every sweep axis needs at least one value");
        }
        if self.k_list.contains(&0) {
            return bad("K must be at least 1");
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.n_samples < 2 {
            return bad("need at least two scenes and a test fraction in [0, 1)");
        }
        if self.eval_bits == 0 || self.eval_bits > 16 {
            return bad("evaluation bits must lie in 1..=16");
        }
        if !(self.lr >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.scene.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// One line of the metrics log. `phase` is `epoch` for training progress
/// (validation metrics) and `test` for held-out evaluation; `bits = 0`
/// marks unquantized feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub scheme: String,
    pub phase: String,
    pub k: usize,
    pub snr_db: f64,
    pub l_p: usize,
    pub bits: u8,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub sum_rate: f64,
    pub min_rate: f64,
    /// Per-user rates joined with `;`.
    pub user_rates: String,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Serialized size of the training bundles a central learner would need.
    pub cl_bytes: u64,
    pub wall_time: f64,
}

pub fn join_rates(r: &[f64]) -> String {
    r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn split_rates(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse().map_err(|_| Error::Format(format!("bad rate '{x}'"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_policy_matches_the_seven_vehicle_split() {
        let masks = Scheme::HMvmm.masks(7, HMvmmPolicy::Mixed).unwrap();
        assert_eq!(masks.iter().filter(|m| m.gps).count(), 5);
        assert_eq!(masks.iter().filter(|m| m.rgb).count(), 3);
        assert_eq!(masks.iter().filter(|m| m.lidar).count(), 3);
        assert_eq!(HMvmmPolicy::Mixed.mask(7), HMvmmPolicy::Mixed.mask(0));
        assert!(Scheme::Zf.masks(3, HMvmmPolicy::Mixed).is_none());
    }

    #[test]
    fn scheme_ids_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.id().parse::<Scheme>().unwrap(), s);
        }
        assert!(matches!("bs-nn".parse::<Scheme>(), Err(Error::UnknownScheme(_))));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("schemes = [\"zf\"]\nseeds = [4, 5]\n").unwrap();
        assert_eq!(partial.schemes, vec![Scheme::Zf]);
        assert_eq!(partial.n_samples, cfg.n_samples);
    }

    #[test]
    fn rates_survive_the_text_form() {
        let r = vec![0.1, 1.0 / 3.0, 7.25e-9];
        assert_eq!(split_rates(&join_rates(&r)).unwrap(), r);
    }
}
