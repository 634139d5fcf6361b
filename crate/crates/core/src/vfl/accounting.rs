//! Communication-volume bookkeeping.

use super::messages::HEADER_LEN;
use crate::airlink::QuantizerConfig;

/// Nominal uplink size of one precoding vector.
pub const NOMINAL_VECTOR_BYTES: u64 = 512;

/// Nominal VFL uplink volume: `n_epoch · K · 512` bytes.
pub fn comm_volume(n_epoch: u64, k: u64) -> u64 {
    n_epoch * k * NOMINAL_VECTOR_BYTES
}

/// Megabytes as `bytes / 1024 / 1000`, the convention under which
/// 800 epochs of 7 vehicles read as 2.8 MB.
pub fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1024.0 / 1000.0
}

pub fn format_mb(bytes: u64) -> String {
    format!("{:.1} MB", megabytes(bytes))
}

/// Wire bytes of one uplink frame carrying `batch` vectors of `n` antennas.
pub fn uplink_frame_bytes(n: usize, batch: usize, quant: &QuantizerConfig) -> usize {
    if quant.training_bypass {
        HEADER_LEN + 4 * batch * 2 * n
    } else {
        HEADER_LEN + 3 + batch * (4 + (2 * n * quant.bits as usize).div_ceil(8))
    }
}

/// Wire bytes of one downlink gradient frame.
pub fn downlink_frame_bytes(n: usize, batch: usize) -> usize {
    HEADER_LEN + 4 * batch * 2 * n
}

/// Wire bytes of one training iteration over `k` vehicles.
pub fn iteration_bytes(n: usize, k: usize, batch: usize, quant: &QuantizerConfig) -> usize {
    k * (uplink_frame_bytes(n, batch, quant) + downlink_frame_bytes(n, batch))
}

/// Wire bytes of one epoch over `n_train` samples split into minibatches.
pub fn epoch_bytes(n: usize, k: usize, n_train: usize, batch_size: usize, quant: &QuantizerConfig) -> usize {
    let full = n_train / batch_size;
    let rest = n_train % batch_size;
    let mut total = full * iteration_bytes(n, k, batch_size, quant);
    if rest > 0 {
        total += iteration_bytes(n, k, rest, quant);
    }
    total
}
