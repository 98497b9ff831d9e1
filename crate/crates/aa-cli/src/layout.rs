//! Fixed experiment-directory layout. All path construction lives here
//! so artifact locations stay consistent across commands.

use std::path::{Path, PathBuf};

use aa_core::Result;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

/// Window width as a filename-safe tag: `0.08` becomes `0p08`.
pub fn delta_tag(delta: f64) -> String {
    format!("{delta}").replace('.', "p")
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn dataset_bin(&self, class: &str) -> PathBuf {
        self.datasets().join(format!("{class}.aajd"))
    }

    pub fn dataset_sidecar(&self, class: &str) -> PathBuf {
        self.datasets().join(format!("{class}.json"))
    }

    pub fn dataset_pgm(&self, class: &str) -> PathBuf {
        self.datasets().join(format!("{class}_avg.pgm"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoints().join(format!("{name}.aack"))
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn score_csv(&self, phase: &str, set: &str) -> PathBuf {
        self.scores().join(format!("{phase}_{set}.csv"))
    }

    pub fn score_meta(&self, phase: &str, set: &str) -> PathBuf {
        self.scores().join(format!("{phase}_{set}.meta.json"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn run_report(&self, phase: &str) -> PathBuf {
        self.reports().join(format!("{phase}_report.json"))
    }

    pub fn loss_csv(&self, phase: &str) -> PathBuf {
        self.reports().join(format!("{phase}_loss.csv"))
    }

    pub fn eval_report(&self, phase: &str) -> PathBuf {
        self.reports().join(format!("{phase}_eval.json"))
    }

    pub fn roc_csv(&self, phase: &str, positive: &str, negative: &str) -> PathBuf {
        self.reports()
            .join(format!("{phase}_roc_{positive}_vs_{negative}.csv"))
    }

    pub fn hist_csv(&self, phase: &str, class: &str) -> PathBuf {
        self.reports().join(format!("{phase}_hist_{class}.csv"))
    }

    pub fn simplex_json(&self, phase: &str, class: &str) -> PathBuf {
        self.reports().join(format!("{phase}_simplex_{class}.json"))
    }

    pub fn scan_json(&self, phase: &str, class: &str, delta: f64) -> PathBuf {
        self.reports()
            .join(format!("{phase}_scan_{class}_d{}.json", delta_tag(delta)))
    }

    pub fn scan_csv(&self, phase: &str, class: &str, delta: f64) -> PathBuf {
        self.reports()
            .join(format!("{phase}_scan_{class}_d{}.csv", delta_tag(delta)))
    }

    pub fn scan_summary(&self, phase: &str) -> PathBuf {
        self.reports().join(format!("{phase}_scan_summary.json"))
    }

    pub fn sigma_min_csv(&self, phase: &str, class: &str) -> PathBuf {
        self.reports().join(format!("{phase}_sigma_min_{class}.csv"))
    }

    pub fn ablation_report(&self) -> PathBuf {
        self.reports().join("ablation_report.json")
    }

    pub fn experiment_report(&self) -> PathBuf {
        self.reports().join("experiment_report.json")
    }

    pub fn experiment_summary(&self) -> PathBuf {
        self.reports().join("experiment_summary.txt")
    }

    /// Path relative to the experiment root, for display and for
    /// directory-independent references inside artifacts.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    pub fn ensure_dirs(&self) -> Result<()> {
        for dir in [
            self.root.clone(),
            self.datasets(),
            self.checkpoints(),
            self.scores(),
            self.reports(),
        ] {
            std::fs::create_dir_all(dir)?;
        }
        Ok(())
    }
}
