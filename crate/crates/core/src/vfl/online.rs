//! Fleet changes during deployment: a vehicle joins with a fresh model
//! while the others keep training from their current parameters.

use serde::{Deserialize, Serialize};

use super::fleet::{CsiMode, Fleet, FleetConfig, VehicleSpec};
use super::train::{train, TrainConfig};
use crate::airlink::QuantizerConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::local_model::BranchConfig;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FleetChange {
    Join(VehicleSpec),
    Leave(u32),
}

/// Applies a membership change. A joining vehicle receives a randomly
/// initialized model for its sensor mask.
pub fn apply_change<T: Scalar>(fleet: &mut Fleet<T>, dataset: &Dataset, change: FleetChange, seed: u64) -> Result<()> {
    match change {
        FleetChange::Join(spec) => fleet.join(dataset, spec, seed),
        FleetChange::Leave(id) => fleet.leave(id).map(|_| ()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// NMSE of the BS's downlink channel estimate.
    pub nmse_db: f64,
    /// Epochs of training after the change.
    pub adapt_epochs: usize,
    /// Fraction of the final sum rate that counts as converged.
    pub threshold: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            nmse_db: -30.0,
            adapt_epochs: 40,
            threshold: 0.95,
        }
    }
}

/// Held-out sum rate after each adaptation epoch; entry 0 is the rate
/// right after the change, before any update.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace {
    pub sum_rates: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn final_rate(&self) -> f64 {
        self.sum_rates.last().copied().unwrap_or(0.0)
    }

    /// First epoch whose rate reaches `fraction` of the final rate.
    pub fn epochs_to(&self, fraction: f64) -> usize {
        let target = fraction * self.final_rate();
        self.sum_rates
            .iter()
            .position(|&r| r >= target)
            .unwrap_or(self.sum_rates.len() - 1)
    }
}

/// Trains `fleet` for `cfg.adapt_epochs` against estimated CSI and records
/// the ground-truth sum rate on `eval_idx` after every epoch.
pub fn adapt<T: Scalar>(
    fleet: &mut Fleet<T>,
    train_idx: &[usize],
    eval_idx: &[usize],
    train_cfg: &TrainConfig,
    cfg: &OnlineConfig,
) -> Result<ConvergenceTrace> {
    if eval_idx.is_empty() {
        return Err(Error::InvalidConfig("online adaptation needs evaluation samples".into()));
    }
    fleet.set_csi(CsiMode::Estimated { nmse_db: cfg.nmse_db });
    let bypass = QuantizerConfig::bypass();
    let chunk = train_cfg.eval_chunk;
    let mut rates = vec![fleet.evaluate(eval_idx, &bypass, chunk)?.sum_rate];
    let tc = TrainConfig {
        max_epochs: cfg.adapt_epochs,
        patience: 0,
        ..train_cfg.clone()
    };
    train(fleet, train_idx, &[], &tc, |_, f| {
        rates.push(f.evaluate(eval_idx, &bypass, chunk)?.sum_rate);
        Ok(())
    })?;
    Ok(ConvergenceTrace { sum_rates: rates })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinComparison {
    pub warm: ConvergenceTrace,
    pub cold: ConvergenceTrace,
    pub warm_epochs: usize,
    pub cold_epochs: usize,
}

/// Paired warm/cold comparison for one vehicle joining an existing fleet.
///
/// Warm: `before` is trained to convergence with ground-truth CSI, then
/// `joiner` is added and the whole fleet adapts against estimated CSI.
/// Cold: every vehicle starts from scratch on the same schedule.
#[allow(clippy::too_many_arguments)]
pub fn compare_join<T: Scalar>(
    dataset: &Dataset,
    branch: &BranchConfig,
    before: &[VehicleSpec],
    joiner: VehicleSpec,
    fleet_cfg: &FleetConfig,
    pretrain: &TrainConfig,
    cfg: &OnlineConfig,
    train_idx: &[usize],
    eval_idx: &[usize],
    seed: u64,
) -> Result<JoinComparison> {
    let mut pre_cfg = fleet_cfg.clone();
    pre_cfg.csi = CsiMode::GroundTruth;
    let mut warm = Fleet::<T>::new(dataset, before, branch, seed, pre_cfg.clone())?;
    let (fit, val) = super::train::split_validation(train_idx, pretrain.val_fraction, pretrain.seed);
    train(&mut warm, &fit, &val, pretrain, |_, _| Ok(()))?;
    apply_change(&mut warm, dataset, FleetChange::Join(joiner), seed)?;
    let warm_trace = adapt(&mut warm, train_idx, eval_idx, pretrain, cfg)?;

    let mut all = before.to_vec();
    all.push(joiner);
    let mut cold = Fleet::<T>::new(dataset, &all, branch, seed, pre_cfg)?;
    let cold_trace = adapt(&mut cold, train_idx, eval_idx, pretrain, cfg)?;
    Ok(JoinComparison {
        warm_epochs: warm_trace.epochs_to(cfg.threshold),
        cold_epochs: cold_trace.epochs_to(cfg.threshold),
        warm: warm_trace,
        cold: cold_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_to_threshold_uses_own_final_rate() {
        let t = ConvergenceTrace {
            sum_rates: vec![1.0, 5.0, 9.0, 9.6, 10.0],
        };
        assert_eq!(t.epochs_to(0.95), 3);
        assert_eq!(t.epochs_to(0.0), 0);
        let flat = ConvergenceTrace { sum_rates: vec![3.0; 4] };
        assert_eq!(flat.epochs_to(0.95), 0);
    }
}
