//! Score and scan artifacts on disk.
//!
//! Score files are CSV with header `event_id,true_class,p_0,...,p_{K-1}`
//! plus a JSON metadata sidecar (model digest, class names, provenance).
//! Scan results serialize as JSON (full) and as plot-ready CSV curves.
//! All floating-point values use Rust's shortest round-trip formatting,
//! so written files re-parse to bitwise identical values.

use super::{ScanResult, ScoreRecord};
use crate::error::{Error, Result};
use crate::eventgen::Provenance;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// JSON sidecar describing a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    /// SHA-256 of the checkpoint file the scores came from.
    pub model_sha256: String,
    /// Output class names, index-aligned with the probability columns.
    pub class_names: Vec<String>,
    pub record_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Writes records as CSV (with leading `#` provenance comments) and the
/// metadata sidecar next to it. `event_id` is the 0-based record index.
pub fn write_scores(
    csv_path: &Path,
    meta_path: &Path,
    records: &[ScoreRecord],
    meta: &ScoreMeta,
    comments: &[String],
) -> Result<()> {
    let k = meta.class_names.len();
    let mut out = String::new();
    for c in comments {
        writeln!(out, "# {c}").expect("in-memory write");
    }
    out.push_str("event_id,true_class");
    for i in 0..k {
        write!(out, ",p_{i}").expect("in-memory write");
    }
    out.push('\n');
    for (i, rec) in records.iter().enumerate() {
        if rec.probs.len() != k {
            return Err(Error::dimension(
                format!("{k} probabilities"),
                format!("{} in record {i}", rec.probs.len()),
            ));
        }
        write!(out, "{i},{}", rec.true_class).expect("in-memory write");
        for p in &rec.probs {
            write!(out, ",{p}").expect("in-memory write");
        }
        out.push('\n');
    }
    std::fs::write(csv_path, out)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Format(format!("score metadata serialization: {e}")))?;
    std::fs::write(meta_path, json)?;
    Ok(())
}

/// Reads a score CSV back. Lines are numbered from 1 including comments;
/// parse failures report the offending line.
pub fn read_scores(csv_path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut records = Vec::new();
    let mut header: Option<usize> = None; // column count once seen
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 3 || cols[0] != "event_id" || cols[1] != "true_class" {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "expected header event_id,true_class,p_0,...".into(),
                });
            }
            for (i, col) in cols[2..].iter().enumerate() {
                if *col != format!("p_{i}") {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("expected probability column p_{i}, got '{col}'"),
                    });
                }
            }
            header = Some(cols.len());
            continue;
        }
        let expected = header.unwrap();
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expected} fields, got {}", cols.len()),
            });
        }
        let probs: Vec<f64> = cols[2..]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad probability in column p_{i}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let rec = ScoreRecord { probs, true_class: cols[1].to_string() };
        rec.validate().map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    if header.is_none() {
        return Err(Error::Parse { line: 1, msg: "score file has no header".into() });
    }
    Ok(records)
}

/// Full scan result as pretty JSON.
pub fn write_scan_json(path: &Path, scan: &ScanResult) -> Result<()> {
    let json = serde_json::to_string_pretty(scan)
        .map_err(|e| Error::Format(format!("scan serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Plot-ready `center,r` curve. Zero-background windows emit an empty r
/// field, preserving the row so curve x-axes stay aligned across widths.
pub fn write_scan_csv(path: &Path, scan: &ScanResult, comments: &[String]) -> Result<()> {
    let mut out = String::new();
    for c in comments {
        writeln!(out, "# {c}").expect("in-memory write");
    }
    out.push_str("center,r\n");
    for w in &scan.windows {
        match w.r.finite() {
            Some(r) => writeln!(out, "{},{}", w.center, r).expect("in-memory write"),
            None => writeln!(out, "{},", w.center).expect("in-memory write"),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Discovery-reach curve `luminosity,sigma_min` over a luminosity grid.
pub fn write_sigma_min_csv(
    path: &Path,
    points: &[(f64, f64)],
    comments: &[String],
) -> Result<()> {
    let mut out = String::new();
    for c in comments {
        writeln!(out, "# {c}").expect("in-memory write");
    }
    out.push_str("luminosity,sigma_min\n");
    for (lum, sigma) in points {
        writeln!(out, "{lum},{sigma}").expect("in-memory write");
    }
    std::fs::write(path, out)?;
    Ok(())
}
