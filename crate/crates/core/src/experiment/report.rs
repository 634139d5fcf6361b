use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::read_rows;
use super::{MetricsRow, Scheme};
use crate::error::{Error, Result};
use crate::vfl::comm_volume;

/// Communication volume of one training run, federated versus central.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub scheme: String,
    pub k: usize,
    pub snr_db: f64,
    pub l_p: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Nominal uplink volume, `epochs · K · 512` bytes.
    pub vfl_nominal_bytes: u64,
    /// Uplink plus downlink bytes recorded on the links.
    pub vfl_trace_bytes: u64,
    /// Bundles a central learner would have collected.
    pub cl_bytes: u64,
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Err(Error::InvalidConfig(format!("no metrics file at {}", path.display())));
    }
    read_rows(&path)
}

/// One row per learned run found in `dir/metrics.csv`.
pub fn accounting_report(dir: &Path) -> Result<Vec<AccountingRow>> {
    Ok(read_metrics(dir)?
        .into_iter()
        .filter(|r| r.phase == "test" && r.bits == 0)
        .filter(|r| r.scheme.parse::<Scheme>().map(Scheme::is_learned).unwrap_or(false))
        .map(|r| AccountingRow {
            epochs: r.epoch,
            vfl_nominal_bytes: comm_volume(r.epoch as u64, r.k as u64),
            vfl_trace_bytes: r.uplink_bytes + r.downlink_bytes,
            cl_bytes: r.cl_bytes,
            scheme: r.scheme,
            k: r.k,
            snr_db: r.snr_db,
            l_p: r.l_p,
            seed: r.seed,
        })
        .collect())
}

/// Writes `report.csv` next to the metrics it was computed from.
pub fn write_report(dir: &Path, rows: &[AccountingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
