//! Experiment configuration: one JSON file describing data generation,
//! the network, training, and the analysis settings. The file is fully
//! serializable; the echoed copy written into the experiment directory
//! re-executes to identical results.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use aa_core::eventgen::{default_specs, ClassSpec};
use aa_core::network::Architecture;
use aa_core::training::{Optimizer, TrainConfig};
use aa_core::util::sha256_hex;
use aa_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; all component seeds derive from it by tag.
    pub seed: u64,
    /// Experiment directory all artifacts are written under.
    pub output_dir: PathBuf,
    pub generator: GeneratorSection,
    /// Network shape; omitted means the default architecture for the
    /// normal-class count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    pub training: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default = "default_grid")]
    pub grid_h: usize,
    #[serde(default = "default_grid")]
    pub grid_w: usize,
    /// Total-energy range [min, max] in GeV.
    #[serde(default = "default_energy_min")]
    pub energy_min: f64,
    #[serde(default = "default_energy_max")]
    pub energy_max: f64,
    /// Classes the classifier is trained on; their order fixes the
    /// network's output order.
    pub normal_classes: Vec<String>,
    /// Known anomaly classes mixed into the awareness term.
    #[serde(default)]
    pub anomaly_classes: Vec<String>,
    /// Classes generated and scored but never trained on.
    #[serde(default)]
    pub unseen_classes: Vec<String>,
    /// Per-class generator shapes; classes not listed here fall back to
    /// the built-in spec of the same name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub specs: BTreeMap<String, ClassSpec>,
    /// Events generated per class.
    pub per_class_count: usize,
    /// Fraction of each class assigned to the train split.
    #[serde(default = "default_split")]
    pub split_fraction: f64,
}

fn default_grid() -> usize {
    32
}
fn default_energy_min() -> f64 {
    500.0
}
fn default_energy_max() -> f64 {
    1000.0
}
fn default_split() -> f64 {
    0.5
}

impl GeneratorSection {
    /// All configured classes: normal, then anomaly, then unseen.
    pub fn all_classes(&self) -> Vec<String> {
        let mut v = self.normal_classes.clone();
        v.extend(self.anomaly_classes.iter().cloned());
        v.extend(self.unseen_classes.iter().cloned());
        v
    }

    /// Non-normal classes (anomaly then unseen), the scan candidates.
    pub fn non_normal_classes(&self) -> Vec<String> {
        let mut v = self.anomaly_classes.clone();
        v.extend(self.unseen_classes.iter().cloned());
        v
    }

    /// Generator shape for a class: explicit entry or built-in fallback.
    pub fn resolve_spec(&self, class: &str) -> Result<ClassSpec> {
        if let Some(spec) = self.specs.get(class) {
            return Ok(spec.clone());
        }
        default_specs().get(class).cloned().ok_or_else(|| {
            Error::config(format!(
                "class '{class}' has no generator spec and no built-in of that name exists"
            ))
        })
    }

    fn validate(&self) -> Result<()> {
        if self.normal_classes.len() < 2 {
            return Err(Error::config(
                "at least two normal classes are required to train a classifier",
            ));
        }
        let mut seen = BTreeSet::new();
        for class in self.all_classes() {
            if class.is_empty() {
                return Err(Error::config("empty class name"));
            }
            if !seen.insert(class.clone()) {
                return Err(Error::config(format!(
                    "class '{class}' appears more than once across normal/anomaly/unseen lists"
                )));
            }
            self.resolve_spec(&class)?;
        }
        for (key, spec) in &self.specs {
            if &spec.name != key {
                return Err(Error::config(format!(
                    "spec entry '{key}' declares name '{}'; key and name must agree",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Weight of the uniform-target anomaly loss term in the aware phase.
    #[serde(default = "default_lambda")]
    pub lambda_aa: f64,
    /// Epochs of the prior phase (and of ablation runs).
    pub epochs: usize,
    /// Epochs of the aware phase; omitted means same as `epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aa_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Anomaly examples drawn per normal example per step.
    #[serde(default = "default_mix_ratio")]
    pub anomaly_mix_ratio: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_mix_ratio() -> f64 {
    1.0
}

impl TrainSection {
    /// Concrete run configuration for one training phase.
    pub fn to_train_config(
        &self,
        seed: u64,
        lambda_aa: f64,
        epochs: usize,
        anomaly_classes: Vec<String>,
    ) -> TrainConfig {
        TrainConfig {
            lambda_aa,
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            anomaly_classes,
            anomaly_mix_ratio: self.anomaly_mix_ratio,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Window widths scanned.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Scan step as a fraction of the window width.
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    /// Class whose output probability is the histogram/scan axis;
    /// omitted means the first normal class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_class: Option<String>,
    /// Classes scanned as anomaly candidates; empty means every
    /// anomaly and unseen class.
    #[serde(default)]
    pub scan_classes: Vec<String>,
    /// Production cross-sections in fb keyed by class; omitted means the
    /// built-in toy table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_sections: Option<BTreeMap<String, f64>>,
    /// Integrated luminosities (fb^-1) the reach curve is evaluated at.
    #[serde(default = "default_luminosity_grid")]
    pub luminosity_grid: Vec<f64>,
    /// Discovery benchmark on N_anomaly / sqrt(N_SM).
    #[serde(default = "default_threshold")]
    pub significance_threshold: f64,
    /// Window width whose best R feeds the reach curve; omitted means
    /// the first entry of `deltas`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_delta: Option<f64>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_deltas() -> Vec<f64> {
    vec![0.08, 0.1, 0.12]
}
fn default_step_fraction() -> f64 {
    0.1
}
fn default_luminosity_grid() -> Vec<f64> {
    vec![
        10.0, 50.0, 100.0, 300.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0,
    ]
}
fn default_threshold() -> f64 {
    5.0
}
fn default_bins() -> usize {
    40
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            deltas: default_deltas(),
            step_fraction: default_step_fraction(),
            axis_class: None,
            scan_classes: Vec::new(),
            cross_sections: None,
            luminosity_grid: default_luminosity_grid(),
            significance_threshold: default_threshold(),
            sigma_delta: None,
            histogram_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    /// Cumulative awareness order; step j trains aware of `pool[..=j]`.
    pub pool: Vec<String>,
    /// Class whose centering is tracked after every step.
    pub probe: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;

        let t = &self.training;
        if !t.lambda_aa.is_finite() || t.lambda_aa < 0.0 {
            return Err(Error::config(format!(
                "lambda_aa must be finite and >= 0, got {}",
                t.lambda_aa
            )));
        }
        if t.epochs < 1 || t.aa_epochs == Some(0) {
            return Err(Error::config("epoch counts must be >= 1"));
        }

        let a = &self.analysis;
        if a.deltas.is_empty() {
            return Err(Error::config("analysis.deltas must list at least one window width"));
        }
        for &d in &a.deltas {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::config(format!(
                    "window width must lie in (0, 1], got {d}"
                )));
            }
        }
        if !(a.step_fraction > 0.0 && a.step_fraction <= 1.0) {
            return Err(Error::config(format!(
                "step_fraction must lie in (0, 1], got {}",
                a.step_fraction
            )));
        }
        if let Some(axis) = &a.axis_class {
            if !self.generator.normal_classes.contains(axis) {
                return Err(Error::config(format!(
                    "axis_class '{axis}' is not a normal class"
                )));
            }
        }
        let non_normal = self.generator.non_normal_classes();
        for class in &a.scan_classes {
            if !non_normal.contains(class) {
                return Err(Error::config(format!(
                    "scan class '{class}' is not an anomaly or unseen class"
                )));
            }
        }
        if let Some(sd) = a.sigma_delta {
            if !a.deltas.contains(&sd) {
                return Err(Error::config(format!(
                    "sigma_delta {sd} is not one of the scanned widths"
                )));
            }
        }
        if a.luminosity_grid.is_empty() {
            return Err(Error::config("luminosity_grid must not be empty"));
        }

        if let Some(ab) = &self.ablation {
            if ab.pool.is_empty() {
                return Err(Error::config("ablation pool must not be empty"));
            }
            let mut seen = BTreeSet::new();
            for class in &ab.pool {
                if !non_normal.contains(class) {
                    return Err(Error::config(format!(
                        "ablation pool class '{class}' is not an anomaly or unseen class"
                    )));
                }
                if !seen.insert(class) {
                    return Err(Error::config(format!(
                        "ablation pool lists '{class}' twice"
                    )));
                }
            }
            if !non_normal.contains(&ab.probe) {
                return Err(Error::config(format!(
                    "ablation probe '{}' is not an anomaly or unseen class",
                    ab.probe
                )));
            }
        }
        Ok(())
    }

    /// Network shape: the configured one or the default for the
    /// normal-class count.
    pub fn architecture(&self) -> Architecture {
        self.architecture
            .clone()
            .unwrap_or_else(|| Architecture::default_for(self.generator.normal_classes.len()))
    }

    /// Histogram/scan axis class (first normal class when unset).
    pub fn axis_class(&self) -> String {
        self.analysis
            .axis_class
            .clone()
            .unwrap_or_else(|| self.generator.normal_classes[0].clone())
    }

    /// Window width feeding the reach curve (first width when unset).
    pub fn sigma_delta(&self) -> f64 {
        self.analysis.sigma_delta.unwrap_or(self.analysis.deltas[0])
    }

    /// Classes scanned as anomaly candidates.
    pub fn scan_classes(&self) -> Vec<String> {
        if self.analysis.scan_classes.is_empty() {
            self.generator.non_normal_classes()
        } else {
            self.analysis.scan_classes.clone()
        }
    }

    /// Digest over the fields that define the experiment's data identity
    /// (seed + generator section). Commands refuse to mix artifacts
    /// produced under different identities in one directory.
    pub fn identity_digest(&self) -> Result<String> {
        let value = serde_json::json!({
            "seed": self.seed,
            "generator": &self.generator,
        });
        let text = serde_json::to_string(&value)
            .map_err(|e| Error::Format(format!("identity serialization: {e}")))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lambda_aa: Option<f64>,
    pub deltas: Option<Vec<f64>>,
}

/// Loads, overrides, and validates an experiment configuration.
pub fn load_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("malformed config {}: {e}", path.display())))?;
    if let Some(seed) = ov.seed {
        config.seed = seed;
    }
    if let Some(out) = &ov.out {
        config.output_dir = out.clone();
    }
    if let Some(lambda) = ov.lambda_aa {
        config.training.lambda_aa = lambda;
    }
    if let Some(deltas) = &ov.deltas {
        config.analysis.deltas = deltas.clone();
        // A width override retargets the reach curve too unless the
        // configured choice is still in the list.
        if let Some(sd) = config.analysis.sigma_delta {
            if !deltas.contains(&sd) {
                config.analysis.sigma_delta = None;
            }
        }
    }
    config.validate()?;
    Ok(config)
}
