use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fleet::{EvalStats, Fleet};
use crate::airlink::QuantizerConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::{rng_for, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; `0` never
    /// stops early.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Samples per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 300,
            patience: 20,
            val_fraction: 0.1,
            seed: 1,
            eval_chunk: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_sum_rate: f64,
    /// Validation metrics; absent without a validation split.
    pub val: Option<EvalStats>,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
    pub clamped: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the fleet holds on return (0 = initial).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub iterations: usize,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }
}

/// Deterministic train/validation split of `indices`.
pub fn split_validation(indices: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx = indices.to_vec();
    idx.shuffle(&mut rng_for(&[tag::SHUFFLE, seed, u64::MAX]));
    let n_val = (indices.len() as f64 * fraction).round() as usize;
    let val = idx.split_off(idx.len() - n_val.min(idx.len()));
    (idx, val)
}

/// Minibatches of one epoch, reshuffled per epoch.
pub fn epoch_batches(train: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx = train.to_vec();
    idx.shuffle(&mut rng_for(&[tag::SHUFFLE, seed, epoch as u64]));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs epochs until `max_epochs` or the validation loss stops improving,
/// then restores the best parameters. `on_epoch` sees every record and
/// the fleet after that epoch's updates.
pub fn train<T, F>(fleet: &mut Fleet<T>, train_idx: &[usize], val_idx: &[usize], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    T: Scalar,
    F: FnMut(&EpochRecord, &mut Fleet<T>) -> Result<()>,
{
    cfg.validate()?;
    if train_idx.is_empty() && cfg.max_epochs > 0 {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let bypass = QuantizerConfig::bypass();
    let mut report = TrainReport::default();
    let mut best_loss = if val_idx.is_empty() {
        f64::INFINITY
    } else {
        fleet.evaluate_train_csi(val_idx, &bypass, cfg.eval_chunk)?.loss
    };
    let mut best = fleet.snapshot();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss = 0.0;
        let mut rate = 0.0;
        let mut up = 0;
        let mut down = 0;
        let mut clamped = 0;
        for batch in epoch_batches(train_idx, cfg.batch_size, cfg.seed, epoch) {
            let s = fleet.train_iteration(&batch)?;
            let w = s.batch as f64 / train_idx.len() as f64;
            loss += s.loss * w;
            rate += s.sum_rate * w;
            up += s.uplink_bytes;
            down += s.downlink_bytes;
            clamped += s.clamped;
            report.iterations += 1;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let val = if val_idx.is_empty() {
            None
        } else {
            Some(fleet.evaluate_train_csi(val_idx, &bypass, cfg.eval_chunk)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss,
            train_sum_rate: rate,
            val,
            uplink_bytes: up,
            downlink_bytes: down,
            clamped,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {loss:.5} sum rate {rate:.4}");
        on_epoch(&record, fleet)?;
        let val_loss = record.val.as_ref().map(|v| v.loss);
        report.history.push(record);
        match val_loss {
            Some(v) if v < best_loss => {
                best_loss = v;
                best = fleet.snapshot();
                report.best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            None => report.best_epoch = epoch,
        }
    }
    if !val_idx.is_empty() {
        fleet.restore(&best);
    }
    Ok(report)
}
