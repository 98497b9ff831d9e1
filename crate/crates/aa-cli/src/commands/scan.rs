//! `aa scan`: slide fixed-width windows over a phase's combined score
//! file and locate where each candidate class concentrates relative to
//! the cross-section-weighted background.
//!
//! Per candidate class and window width this writes the full window
//! table (JSON) and a plot-ready `center,r` curve (CSV). The best R of
//! the configured reference width feeds the minimum-detectable
//! cross-section curve over the luminosity grid.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use aa_core::analysis::{
    read_scores, scan_windows, sigma_min, write_scan_csv, write_scan_json, write_sigma_min_csv,
    CrossSectionTable, ScoreMeta,
};
use aa_core::eventgen::Provenance;
use aa_core::util::file_sha256;
use aa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::layout::delta_tag;
use crate::lock::DirLock;
use crate::provenance::{comment_lines, make_provenance, verify_config_echo};

#[derive(Debug, Clone)]
pub struct ScanOpts {
    /// Score-file phase to scan ("prior", "aa", ...).
    pub phase: String,
}

/// Scan summary as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummaryFile {
    pub phase: String,
    /// Class whose output probability is the scanned axis.
    pub axis_class: String,
    pub axis: usize,
    pub deltas: Vec<f64>,
    pub step_fraction: f64,
    pub significance_threshold: f64,
    /// Width whose best R feeds the reach curve.
    pub sigma_delta: f64,
    pub background_classes: Vec<String>,
    pub classes: BTreeMap<String, ClassScanSummary>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScanSummary {
    /// Keyed by the filename-safe width tag ("0p08", ...).
    pub per_delta: BTreeMap<String, DeltaScanSummary>,
    /// (luminosity, minimum detectable cross-section) points; absent
    /// when the reference width found no signal (best R = 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min_file: Option<String>,
    pub scan_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScanSummary {
    pub delta: f64,
    pub r_max: f64,
    pub best_p_min: f64,
    pub best_p_max: f64,
    pub windows: usize,
    pub zero_background_windows: usize,
}

pub fn run(config: &ExperimentConfig, opts: &ScanOpts) -> Result<()> {
    let layout = super::prepared_layout(config)?;
    let _lock = DirLock::acquire(&layout)?;
    verify_config_echo(&layout, config)?;

    let csv_path = layout.score_csv(&opts.phase, "all");
    if !csv_path.exists() {
        return Err(Error::lookup(format!(
            "no combined score file at {} — run `aa eval --phase {}` first",
            csv_path.display(),
            opts.phase
        )));
    }
    let records = read_scores(&csv_path)?;
    let meta_text = std::fs::read_to_string(layout.score_meta(&opts.phase, "all"))?;
    let meta: ScoreMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Format(format!("score metadata parse: {e}")))?;
    if records.len() != meta.record_count {
        return Err(Error::Format(format!(
            "score file holds {} records but its metadata declares {}",
            records.len(),
            meta.record_count
        )));
    }

    let axis_class = config.axis_class();
    let axis = meta
        .class_names
        .iter()
        .position(|c| c == &axis_class)
        .ok_or_else(|| {
            Error::config(format!("axis class '{axis_class}' is not a score column"))
        })?;

    let backgrounds = config.generator.normal_classes.clone();
    let scan_classes = config.scan_classes();
    let present: BTreeSet<&str> = records.iter().map(|r| r.true_class.as_str()).collect();
    for class in backgrounds.iter().chain(scan_classes.iter()) {
        if !present.contains(class.as_str()) {
            return Err(Error::lookup(format!(
                "score file has no records of class '{class}'"
            )));
        }
    }

    let xsec = match &config.analysis.cross_sections {
        Some(map) => CrossSectionTable::new(map.clone())?,
        None => CrossSectionTable::default_toy(),
    };
    for bg in &backgrounds {
        xsec.get(bg)?;
    }

    let scores_digest = file_sha256(&csv_path)?;
    let provenance = make_provenance(
        config,
        &[
            ("scores".to_string(), scores_digest),
            ("checkpoint".to_string(), meta.model_sha256.clone()),
        ],
    )?;
    let base_comments = {
        let mut c = vec![format!("phase={}", opts.phase), format!("axis_class={axis_class}")];
        c.extend(comment_lines(&provenance));
        c
    };

    let step_fraction = config.analysis.step_fraction;
    let sigma_delta = config.sigma_delta();
    let threshold = config.analysis.significance_threshold;

    let mut classes = BTreeMap::new();
    for class in &scan_classes {
        let mut per_delta = BTreeMap::new();
        let mut scan_files = Vec::new();
        let mut sigma_r_max = None;
        for &delta in &config.analysis.deltas {
            let scan = scan_windows(
                &records,
                delta,
                delta * step_fraction,
                &xsec,
                class,
                &backgrounds,
                axis,
            )?;
            let json_path = layout.scan_json(&opts.phase, class, delta);
            write_scan_json(&json_path, &scan)?;
            let csv_out = layout.scan_csv(&opts.phase, class, delta);
            let mut comments = base_comments.clone();
            comments.push(format!("anomaly_class={class} width={delta}"));
            write_scan_csv(&csv_out, &scan, &comments)?;
            scan_files.push(layout.relative(&json_path));
            scan_files.push(layout.relative(&csv_out));
            if delta == sigma_delta {
                sigma_r_max = Some(scan.r_max);
            }
            println!(
                "scanned class={class} width={delta}: r_max={} in [{}, {}]",
                scan.r_max, scan.best_window.p_min, scan.best_window.p_max
            );
            per_delta.insert(
                delta_tag(delta),
                DeltaScanSummary {
                    delta,
                    r_max: scan.r_max,
                    best_p_min: scan.best_window.p_min,
                    best_p_max: scan.best_window.p_max,
                    windows: scan.windows.len(),
                    zero_background_windows: scan.zero_background_windows,
                },
            );
        }

        // Reach curve from the reference width's best R.
        let r_max = sigma_r_max.expect("sigma_delta is validated to be in deltas");
        let (sigma_points, sigma_file) = if r_max > 0.0 {
            let points: Vec<(f64, f64)> = config
                .analysis
                .luminosity_grid
                .iter()
                .map(|&lum| Ok((lum, sigma_min(r_max, lum, threshold)?)))
                .collect::<Result<_>>()?;
            let path = layout.sigma_min_csv(&opts.phase, class);
            let mut comments = base_comments.clone();
            comments.push(format!(
                "anomaly_class={class} width={sigma_delta} r_max={r_max} threshold={threshold}"
            ));
            write_sigma_min_csv(&path, &points, &comments)?;
            println!("wrote {}", layout.relative(&path));
            (Some(points), Some(layout.relative(&path)))
        } else {
            println!("class={class}: best R is 0 at width {sigma_delta}; no reach curve");
            (None, None)
        };

        classes.insert(
            class.clone(),
            ClassScanSummary {
                per_delta,
                sigma_min: sigma_points,
                sigma_min_file: sigma_file,
                scan_files,
            },
        );
    }

    let file = ScanSummaryFile {
        phase: opts.phase.clone(),
        axis_class,
        axis,
        deltas: config.analysis.deltas.clone(),
        step_fraction,
        significance_threshold: threshold,
        sigma_delta,
        background_classes: backgrounds,
        classes,
        provenance,
    };
    let path = layout.scan_summary(&opts.phase);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("scan summary serialization: {e}")))?;
    std::fs::write(&path, json + "\n")?;
    println!("wrote {}", layout.relative(&path));
    Ok(())
}
