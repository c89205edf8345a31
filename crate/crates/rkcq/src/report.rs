//! Convergence reports and their serialization: CSV tables with an
//! `k,error,eoc` header, JSON sidecars, and reproducible run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LevelError {
    pub k: f64,
    pub error: f64,
    /// Errors that stagnate at the roundoff floor are excluded from the
    /// median order statistic.
    pub at_floor: bool,
}

/// Consistency check of the reference solution: the discrepancy between the
/// reference and a twice-coarser companion must sit well below the finest
/// measured error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub k_ref: f64,
    pub discrepancy: f64,
    pub required: f64,
    pub pass: bool,
}

/// Per-level errors of one convergence study with their empirical orders
/// `eoc_i = log(e_{i-1}/e_i) / log(k_{i-1}/k_i)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub quantity: String,
    pub t_final: f64,
    pub levels: Vec<LevelError>,
    pub eoc: Vec<f64>,
    pub valid: bool,
    pub reference: Option<ReferenceCheck>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    pub fn new(method: &str, quantity: &str, t_final: f64, levels: Vec<LevelError>) -> Self {
        let eoc = eoc_rates(&levels);
        Self {
            method: method.to_string(),
            quantity: quantity.to_string(),
            t_final,
            levels,
            eoc,
            valid: true,
            reference: None,
            notes: Vec::new(),
        }
    }

    /// Median of the last `window` empirical orders whose two defining
    /// levels both sit above the roundoff floor.
    pub fn median_recent_eoc(&self, window: usize) -> Option<f64> {
        let mut usable: Vec<f64> = Vec::new();
        for i in 0..self.eoc.len() {
            if !self.levels[i].at_floor && !self.levels[i + 1].at_floor {
                usable.push(self.eoc[i]);
            }
        }
        if usable.is_empty() {
            return None;
        }
        let start = usable.len().saturating_sub(window);
        let mut tail = usable[start..].to_vec();
        tail.sort_by(f64::total_cmp);
        Some(tail[tail.len() / 2])
    }

    pub fn errors_strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].error < w[0].error)
    }

    /// CSV body with the exact `k,error,eoc` header; the first row carries
    /// no order.
    pub fn csv_body(&self) -> String {
        let mut out = String::from("k,error,eoc\n");
        for (i, level) in self.levels.iter().enumerate() {
            let eoc = if i == 0 {
                String::new()
            } else {
                format!("{:.12e}", self.eoc[i - 1])
            };
            out.push_str(&format!("{:.12e},{:.12e},{}\n", level.k, level.error, eoc));
        }
        out
    }
}

pub fn eoc_rates(levels: &[LevelError]) -> Vec<f64> {
    levels
        .windows(2)
        .map(|w| (w[0].error / w[1].error).ln() / (w[0].k / w[1].k).ln())
        .collect()
}

/// Provenance record written next to every CSV. The results hash covers
/// the CSV body only, so identical configurations hash identically while
/// timestamps live in a separate field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub unix_timestamp: u64,
    pub outputs: Vec<String>,
    pub results_sha256: String,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, outputs: Vec<String>, csv_body: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(csv_body.as_bytes());
        let digest: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Self {
            command_line: std::env::args().collect(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            unix_timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs,
            results_sha256: digest,
        }
    }
}

/// Write a file atomically (write to a sibling temp path, then rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Emit a report as CSV plus a JSON sidecar carrying the full report and a
/// run manifest. Returns the two paths written.
pub fn emit_report(
    report: &ConvergenceReport,
    dir: &Path,
    stem: &str,
    config: serde_json::Value,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let body = report.csv_body();
    write_atomic(&csv_path, &body)?;
    let manifest = RunManifest::new(
        config,
        vec![
            csv_path.to_string_lossy().into_owned(),
            json_path.to_string_lossy().into_owned(),
        ],
        &body,
    );
    let sidecar = serde_json::json!({
        "report": report,
        "manifest": manifest,
    });
    write_atomic(&json_path, &serde_json::to_string_pretty(&sidecar)?)?;
    if !report.valid {
        return Err(Error::InvalidReport(format!(
            "reference consistency check failed for {stem} (see {})",
            json_path.display()
        )));
    }
    Ok((csv_path, json_path))
}

/// Parse a CSV body produced by `csv_body` back into (k, error) pairs.
pub fn parse_csv_body(body: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = body.lines();
    match lines.next() {
        Some("k,error,eoc") => {}
        other => {
            return Err(Error::InvalidConfig(format!(
                "unexpected CSV header {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let k = fields
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("bad CSV row: {line}")))?;
        let error = fields
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("bad CSV row: {line}")))?;
        out.push((k, error));
    }
    Ok(out)
}
