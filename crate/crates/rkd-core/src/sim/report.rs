//! Per-round reports and their on-disk forms: a compact CSV for analysis
//! and a JSONL stream with full diagnostics.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Wall time spent in each phase of a round, in seconds. Timings are the
/// one non-deterministic part of a report; they go to the JSONL diagnostics
/// but are kept out of the CSV so reruns produce identical CSV bytes.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct PhaseTimings {
    pub local_train: f64,
    pub defense: f64,
    pub aggregate: f64,
    pub distill: f64,
    pub dispatch: f64,
    pub evaluate: f64,
}

/// Everything the simulator knows about one finished round.
#[derive(Clone, Debug, Serialize)]
pub struct RoundReport {
    pub round: usize,
    /// Accuracy on the clean test set.
    pub mta: f64,
    /// Fraction of triggered test images classified as the target label.
    pub asr: f64,
    /// Clients treated as benign this round, ascending.
    pub benign_set: Vec<usize>,
    /// Clients whose models formed the distillation ensemble, ascending.
    pub ensemble: Vec<usize>,
    /// Minimum cluster size in effect (0 for aggregators that never cluster).
    pub q_used: usize,
    /// True when clustering found only noise and kept everyone.
    pub fallback_all_benign: bool,
    pub zero_norm_clients: Vec<usize>,
    /// Cosine scores by client order; None when scoring was skipped.
    pub scores: Option<Vec<f32>>,
    /// HDBSCAN labels by client order, -1 for noise; None when skipped.
    pub cluster_labels: Option<Vec<i32>>,
    /// Mean score per cluster id.
    pub cluster_means: Option<Vec<(i32, f64)>>,
    /// Mean-plus-k-sigma cut on L1 distances; None when selection skipped.
    pub selection_threshold: Option<f64>,
    /// Distillation loss per epoch; empty when distillation was skipped.
    pub epoch_kl: Vec<f64>,
    pub phase_seconds: PhaseTimings,
}

impl RoundReport {
    pub fn benign_count(&self) -> usize {
        self.benign_set.len()
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble.len()
    }
}

/// Renders the report table. The leading comment pins the config hash so a
/// CSV can always be traced back to the exact run that produced it.
pub fn render_reports_csv(reports: &[RoundReport], config_hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("round,mta,asr,benign_count,ensemble_size,q_used\n");
    for r in reports {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{},{}\n",
            r.round,
            r.mta,
            r.asr,
            r.benign_count(),
            r.ensemble_size(),
            r.q_used
        ));
    }
    out
}

/// One JSON object per line, in round order.
pub fn render_diagnostics_jsonl(reports: &[RoundReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes via a sibling temp file and rename, so a crash mid-write never
/// leaves a truncated file at the final path.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_reports_csv(path: &Path, reports: &[RoundReport], config_hash: &str) -> Result<()> {
    write_atomic(path, render_reports_csv(reports, config_hash).as_bytes())
}

pub fn write_diagnostics_jsonl(path: &Path, reports: &[RoundReport]) -> Result<()> {
    write_atomic(path, render_diagnostics_jsonl(reports)?.as_bytes())
}
