//! `aa report`: consolidate everything in the experiment directory into
//! one machine-readable report plus a human-readable summary.
//!
//! The report inventories every artifact with its SHA-256, verifies the
//! recorded digests (dataset sidecars, checkpoint headers), and embeds
//! the training, evaluation, scan, and ablation summaries. Digest
//! mismatches are flagged, not fatal; absent files that other artifacts
//! reference are an error that lists every missing path. Rerunning the
//! pipeline under the same config reproduces the report byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use aa_core::eventgen::DatasetSidecar;
use aa_core::network::load_checkpoint;
use aa_core::util::file_sha256;
use aa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::layout::Layout;
use crate::lock::DirLock;
use crate::provenance::{config_sha256, verify_config_echo};

use super::eval::EvalReportFile;
use super::scan::ScanSummaryFile;
use super::train::{AblationReportFile, TrainReportFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactStatus {
    /// "ok" or "integrity_mismatch".
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub start_epoch: usize,
    pub epochs_run: usize,
    pub lambda_aa: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Awareness-saturation table: probe centering as awareness grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub probe_class: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Number of anomaly classes the run was aware of (0 = prior).
    pub aware_count: usize,
    pub aware_classes: Vec<String>,
    pub probe_centering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReportFile {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    /// Every artifact in the experiment directory, keyed by relative
    /// path, with digest and integrity status.
    pub artifacts: BTreeMap<String, ArtifactStatus>,
    /// Paths whose recorded digests did not match their content.
    pub integrity_failures: Vec<String>,
    pub training: BTreeMap<String, TrainingSummary>,
    pub evaluation: BTreeMap<String, EvalReportFile>,
    pub scans: BTreeMap<String, ScanSummaryFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
}

/// Artifact inventory under construction.
struct Inventory<'a> {
    layout: &'a Layout,
    artifacts: BTreeMap<String, ArtifactStatus>,
    missing: BTreeSet<String>,
    failures: BTreeSet<String>,
}

impl<'a> Inventory<'a> {
    fn new(layout: &'a Layout) -> Inventory<'a> {
        Inventory {
            layout,
            artifacts: BTreeMap::new(),
            missing: BTreeSet::new(),
            failures: BTreeSet::new(),
        }
    }

    /// Records a file that must exist; returns whether it does.
    fn require(&mut self, path: &Path) -> Result<bool> {
        let rel = self.layout.relative(path);
        if !path.exists() {
            self.missing.insert(rel);
            return Ok(false);
        }
        if !self.artifacts.contains_key(&rel) {
            self.artifacts.insert(
                rel,
                ArtifactStatus { status: "ok".into(), sha256: Some(file_sha256(path)?) },
            );
        }
        Ok(true)
    }

    fn flag(&mut self, path: &Path, why: &str) {
        let rel = self.layout.relative(path);
        self.failures.insert(format!("{rel}: {why}"));
        if let Some(status) = self.artifacts.get_mut(&rel) {
            status.status = "integrity_mismatch".into();
        }
    }
}

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let layout = super::prepared_layout(config)?;
    let _lock = DirLock::acquire(&layout)?;
    verify_config_echo(&layout, config)?;

    let mut inv = Inventory::new(&layout);
    inv.require(&layout.config())?;

    // Datasets: container + sidecar + preview per configured class; the
    // sidecar's recorded container digest must match the container.
    for class in config.generator.all_classes() {
        let bin = layout.dataset_bin(&class);
        let sidecar_path = layout.dataset_sidecar(&class);
        let have_bin = inv.require(&bin)?;
        let have_sidecar = inv.require(&sidecar_path)?;
        inv.require(&layout.dataset_pgm(&class))?;
        if have_bin && have_sidecar {
            match serde_json::from_str::<DatasetSidecar>(&std::fs::read_to_string(&sidecar_path)?)
            {
                Ok(sidecar) => {
                    if sidecar.container_sha256 != file_sha256(&bin)? {
                        inv.flag(&bin, "container digest does not match its sidecar");
                    }
                }
                Err(e) => inv.flag(&sidecar_path, &format!("unreadable sidecar: {e}")),
            }
        }
    }

    // Every checkpoint present: the header's parameter-blob digest must
    // match the blob.
    let mut checkpoint_files: Vec<PathBuf> = Vec::new();
    if layout.checkpoints().exists() {
        for entry in std::fs::read_dir(layout.checkpoints())? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "aack") {
                checkpoint_files.push(path);
            }
        }
    }
    checkpoint_files.sort();
    for path in &checkpoint_files {
        inv.require(path)?;
        if let Err(e) = load_checkpoint(path) {
            inv.flag(path, &format!("{e}"));
        }
    }

    // Training phases: any <phase>_report.json in reports/.
    let mut training = BTreeMap::new();
    let mut evaluation = BTreeMap::new();
    let mut scans = BTreeMap::new();
    for phase in discover(&layout, "_report.json", &["ablation", "experiment"])? {
        let path = layout.run_report(&phase);
        inv.require(&path)?;
        let file: TrainReportFile = parse_json(&path)?;
        inv.require(&layout.loss_csv(&phase))?;
        if let Some(ckpt) = &file.report.checkpoint {
            inv.require(&layout.root().join(ckpt))?;
        }
        training.insert(
            phase,
            TrainingSummary {
                start_epoch: file.report.start_epoch,
                epochs_run: file.report.config.epochs,
                lambda_aa: file.report.config.lambda_aa,
                final_train_acc: file.report.final_train_acc,
                final_test_acc: file.report.final_test_acc,
                checkpoint: file.report.checkpoint.clone(),
            },
        );
    }

    // Evaluations: every file the eval summary references must exist.
    for phase in discover(&layout, "_eval.json", &[])? {
        let path = layout.eval_report(&phase);
        inv.require(&path)?;
        let file: EvalReportFile = parse_json(&path)?;
        inv.require(&layout.root().join(&file.checkpoint))?;
        for (set, rel) in &file.score_files {
            inv.require(&layout.root().join(rel))?;
            inv.require(&layout.score_meta(&phase, set))?;
        }
        for rel in file
            .histogram_files
            .values()
            .chain(file.roc_files.values())
            .chain(file.simplex_files.values())
        {
            inv.require(&layout.root().join(rel))?;
        }
        evaluation.insert(phase, file);
    }

    // Scans: referenced curve files must exist.
    for phase in discover(&layout, "_scan_summary.json", &[])? {
        let path = layout.scan_summary(&phase);
        inv.require(&path)?;
        let file: ScanSummaryFile = parse_json(&path)?;
        for class_summary in file.classes.values() {
            for rel in &class_summary.scan_files {
                inv.require(&layout.root().join(rel))?;
            }
            if let Some(rel) = &class_summary.sigma_min_file {
                inv.require(&layout.root().join(rel))?;
            }
        }
        scans.insert(phase, file);
    }

    // Ablation sweep, when present.
    let mut ablation = None;
    if layout.ablation_report().exists() {
        let path = layout.ablation_report();
        inv.require(&path)?;
        let file: AblationReportFile = parse_json(&path)?;
        inv.require(&layout.root().join(&file.prior_checkpoint))?;
        let mut rows = vec![AblationRow {
            aware_count: 0,
            aware_classes: Vec::new(),
            probe_centering: file.prior_probe_centering,
        }];
        for step in &file.steps {
            inv.require(&layout.root().join(&step.checkpoint))?;
            rows.push(AblationRow {
                aware_count: step.aware_classes.len(),
                aware_classes: step.aware_classes.clone(),
                probe_centering: step.probe_centering,
            });
        }
        ablation = Some(AblationTable { probe_class: file.probe_class.clone(), rows });
    }

    if !inv.missing.is_empty() {
        let listing: Vec<String> = inv.missing.iter().cloned().collect();
        return Err(Error::lookup(format!(
            "missing artifacts: {}",
            listing.join(", ")
        )));
    }

    let report = ExperimentReportFile {
        config: config.clone(),
        config_sha256: config_sha256(config)?,
        artifacts: inv.artifacts,
        integrity_failures: inv.failures.into_iter().collect(),
        training,
        evaluation,
        scans,
        ablation,
    };

    let report_path = layout.experiment_report();
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, json + "\n")?;

    let summary_path = layout.experiment_summary();
    std::fs::write(&summary_path, summary_text(&report))?;

    println!("wrote {}", layout.relative(&report_path));
    println!("wrote {}", layout.relative(&summary_path));
    println!("report sha256={}", file_sha256(&report_path)?);
    if report.integrity_failures.is_empty() {
        println!("integrity: all recorded digests match");
    } else {
        for failure in &report.integrity_failures {
            println!("integrity FAILURE: {failure}");
        }
    }
    Ok(())
}

/// Phase prefixes of `reports/<phase><suffix>` files, sorted, skipping
/// the listed prefixes.
fn discover(layout: &Layout, suffix: &str, skip: &[&str]) -> Result<Vec<String>> {
    let mut phases = BTreeSet::new();
    if layout.reports().exists() {
        for entry in std::fs::read_dir(layout.reports())? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(prefix) = name.strip_suffix(suffix) {
                if !prefix.is_empty() && !skip.contains(&prefix) {
                    phases.insert(prefix.to_string());
                }
            }
        }
    }
    Ok(phases.into_iter().collect())
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("cannot parse {}: {e}", path.display())))
}

/// Plain-text rendering of the consolidated report. A pure function of
/// the report, so reruns reproduce it byte for byte.
fn summary_text(report: &ExperimentReportFile) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let g = &report.config.generator;

    out.push_str("experiment summary\n==================\n");
    let _ = writeln!(out, "seed: {}", report.config.seed);
    let _ = writeln!(out, "normal classes: {}", g.normal_classes.join(", "));
    let _ = writeln!(out, "anomaly classes: {}", join_or_dash(&g.anomaly_classes));
    let _ = writeln!(out, "unseen classes: {}", join_or_dash(&g.unseen_classes));
    let _ = writeln!(
        out,
        "events per class: {} (train fraction {}, grid {}x{})",
        g.per_class_count, g.split_fraction, g.grid_h, g.grid_w
    );
    let _ = writeln!(out, "config sha256: {}", report.config_sha256);

    if !report.training.is_empty() {
        out.push_str("\ntraining\n--------\n");
        for (phase, t) in &report.training {
            let _ = writeln!(
                out,
                "{phase}: epochs {}..{}, lambda_aa {}, final train acc {}, final test acc {}",
                t.start_epoch,
                t.start_epoch + t.epochs_run,
                t.lambda_aa,
                t.final_train_acc,
                t.final_test_acc
            );
        }
    }

    if !report.evaluation.is_empty() {
        out.push_str("\nevaluation\n----------\n");
        for (phase, e) in &report.evaluation {
            let _ = writeln!(
                out,
                "{phase}: train acc {}, test acc {}",
                e.train_accuracy, e.test_accuracy
            );
            for (pair, auc) in &e.aucs {
                let _ = writeln!(out, "  auc {pair}: {auc}");
            }
            let centering: Vec<String> = e
                .centering
                .iter()
                .map(|(c, v)| format!("{c}={v}"))
                .collect();
            let _ = writeln!(out, "  centering: {}", centering.join(", "));
        }
    }

    if !report.scans.is_empty() {
        out.push_str("\nwindow scans\n------------\n");
        for (phase, s) in &report.scans {
            let _ = writeln!(out, "{phase} (axis {}):", s.axis_class);
            for (class, summary) in &s.classes {
                for d in summary.per_delta.values() {
                    let _ = writeln!(
                        out,
                        "  {class}: width {} -> R_max {} in [{}, {}]",
                        d.delta, d.r_max, d.best_p_min, d.best_p_max
                    );
                }
                if let Some(points) = &summary.sigma_min {
                    if let Some((lum, sigma)) =
                        points.iter().find(|(lum, _)| *lum == 3000.0).or(points.last())
                    {
                        let _ = writeln!(
                            out,
                            "  {class}: minimum detectable cross-section at L={lum}: {sigma} fb"
                        );
                    }
                }
            }
        }
    }

    if let Some(table) = &report.ablation {
        let _ = writeln!(
            out,
            "\nawareness saturation (probe {})\n-------------------------------",
            table.probe_class
        );
        for row in &table.rows {
            let _ = writeln!(
                out,
                "aware {}: probe centering {} (classes: {})",
                row.aware_count,
                row.probe_centering,
                join_or_dash(&row.aware_classes)
            );
        }
    }

    out.push_str("\nintegrity\n---------\n");
    if report.integrity_failures.is_empty() {
        let _ = writeln!(
            out,
            "ok — all recorded digests match ({} artifacts)",
            report.artifacts.len()
        );
    } else {
        for failure in &report.integrity_failures {
            let _ = writeln!(out, "FAILED: {failure}");
        }
    }
    out
}

fn join_or_dash(items: &[String]) -> String {
    if items.is_empty() {
        "-".to_string()
    } else {
        items.join(", ")
    }
}
