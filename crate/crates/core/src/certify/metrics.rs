//! Summary statistics over a run of per-step certificates.

use std::fmt::Write;

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::model::CertificationRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityMetrics {
    /// `(k, fraction of steps with threshold >= k)` for `k = 0..=max + 1`.
    pub histogram: Vec<(usize, f64)>,
    pub average: f64,
}

pub fn stability_metrics(records: &[CertificationRecord], horizon: usize) -> Result<StabilityMetrics> {
    if records.len() != horizon || horizon == 0 {
        return Err(CoreError::Precondition(format!(
            "expected {horizon} records (horizon must be positive), got {}",
            records.len()
        )));
    }
    let max = records.iter().map(|r| r.threshold).max().unwrap_or(0);
    let h = horizon as f64;
    let histogram = (0..=max + 1)
        .map(|k| {
            let hits = records.iter().filter(|r| r.threshold >= k).count();
            (k, hits as f64 / h)
        })
        .collect();
    let average = records.iter().map(|r| r.threshold as f64).sum::<f64>() / h;
    Ok(StabilityMetrics { histogram, average })
}

/// `t,protocol,action,window_used,threshold` rows.
pub fn records_to_csv(protocol: &str, records: &[CertificationRecord]) -> String {
    let mut out = String::from("t,protocol,action,window_used,threshold\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t, protocol, r.action, r.window_used, r.threshold
        )
        .unwrap();
    }
    out
}

/// `k,ratio` rows with six decimals.
pub fn histogram_to_csv(metrics: &StabilityMetrics) -> String {
    let mut out = String::from("k,ratio\n");
    for (k, ratio) in &metrics.histogram {
        writeln!(out, "{k},{ratio:.6}").unwrap();
    }
    out
}
