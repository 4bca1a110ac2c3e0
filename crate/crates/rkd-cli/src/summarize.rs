//! Report reading and the cross-run summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Final-round metrics of one run, as read back from its reports.csv.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub path: PathBuf,
    pub config_hash: String,
    pub rounds: usize,
    pub final_mta: f64,
    pub final_asr: f64,
}

fn malformed(path: &Path, what: &str) -> CliError {
    CliError::Runtime(format!("malformed report {}: {what}", path.display()))
}

/// Reads one reports.csv as written by the simulator: a config hash
/// comment, the column header, then one row per round.
pub fn read_report_csv(path: &Path) -> CliResult<RunSummary> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let hash_line = lines.next().ok_or_else(|| malformed(path, "empty file"))?;
    let config_hash = hash_line
        .strip_prefix("# config_hash=")
        .ok_or_else(|| malformed(path, "missing config hash comment"))?
        .to_string();
    let header = lines.next().ok_or_else(|| malformed(path, "missing header"))?;
    if header != "round,mta,asr,benign_count,ensemble_size,q_used" {
        return Err(malformed(path, "unexpected column header"));
    }
    let mut rounds = 0usize;
    let mut last: Option<(f64, f64)> = None;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(malformed(path, &format!("row with {} fields", fields.len())));
        }
        let mta: f64 = fields[1]
            .parse()
            .map_err(|_| malformed(path, "unparseable mta"))?;
        let asr: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(path, "unparseable asr"))?;
        rounds += 1;
        last = Some((mta, asr));
    }
    let (final_mta, final_asr) = last.ok_or_else(|| malformed(path, "no data rows"))?;
    Ok(RunSummary {
        path: path.to_path_buf(),
        config_hash,
        rounds,
        final_mta,
        final_asr,
    })
}

fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean seconds per phase across every round in a diagnostics.jsonl.
pub fn read_phase_means(path: &Path) -> CliResult<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut rounds = 0usize;
    for line in text.lines() {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|_| malformed(path, "unparseable JSON line"))?;
        let phases = v
            .get("phase_seconds")
            .and_then(|p| p.as_object())
            .ok_or_else(|| malformed(path, "missing phase_seconds"))?;
        for (k, val) in phases {
            let s = val
                .as_f64()
                .ok_or_else(|| malformed(path, "non-numeric phase time"))?;
            *sums.entry(k.clone()).or_insert(0.0) += s;
        }
        rounds += 1;
    }
    if rounds == 0 {
        return Err(malformed(path, "no rounds"));
    }
    for v in sums.values_mut() {
        *v /= rounds as f64;
    }
    Ok(sums)
}

/// Runs grouped by config hash, each with final-round metrics and the
/// across-run mean and sample standard deviation.
pub fn render_summary(runs: &[RunSummary], timings: &[(PathBuf, BTreeMap<String, f64>)]) -> String {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.config_hash).or_default().push(r);
    }
    let mut out = String::new();
    for (hash, group) in &groups {
        let runs_word = if group.len() == 1 { "run" } else { "runs" };
        writeln!(out, "config {hash} ({} {runs_word})", group.len()).unwrap();
        writeln!(out, "  {:<40} {:>6} {:>10} {:>10}", "path", "rounds", "final_mta", "final_asr")
            .unwrap();
        for r in group {
            writeln!(
                out,
                "  {:<40} {:>6} {:>10.6} {:>10.6}",
                r.path.display(),
                r.rounds,
                r.final_mta,
                r.final_asr
            )
            .unwrap();
        }
        let (mta_mean, mta_sd) = mean_stddev(&group.iter().map(|r| r.final_mta).collect::<Vec<_>>());
        let (asr_mean, asr_sd) = mean_stddev(&group.iter().map(|r| r.final_asr).collect::<Vec<_>>());
        writeln!(
            out,
            "  mta {mta_mean:.6} ± {mta_sd:.6}, asr {asr_mean:.6} ± {asr_sd:.6}"
        )
        .unwrap();
    }
    for (path, phases) in timings {
        writeln!(out, "mean phase seconds for {}", path.display()).unwrap();
        for (phase, secs) in phases {
            writeln!(out, "  {phase:<12} {secs:.6}").unwrap();
        }
    }
    out
}
