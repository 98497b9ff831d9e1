//! `aa train`: run one training phase.
//!
//! * `prior` — cross-entropy on the normal classes from fresh parameters.
//! * `aa` — continue from the prior checkpoint (or `--init`, or fresh
//!   parameters with `--cold-start`) with the uniform-target anomaly
//!   term added at weight `lambda_aa`.
//! * `ablation` — cumulative awareness sweep over the configured pool,
//!   tracking the probe class's centering after every step.
//!
//! Each phase writes a checkpoint, a run report (JSON), and a per-epoch
//! loss CSV. The training seed derives from the global seed by the tag
//! `train`, so every phase of one experiment shares it.

use std::collections::BTreeMap;
use std::path::PathBuf;

use aa_core::eventgen::{Dataset, Provenance};
use aa_core::network::{
    init_params, load_checkpoint, save_checkpoint, Architecture, CheckpointMeta, NetworkParams,
    OptimizerInfo,
};
use aa_core::training::{
    aa_run, ablation_sweep, prior_run, write_loss_csv, Optimizer, RunReport, TrainConfig,
    TrainOutcome,
};
use aa_core::util::{derive_seed, file_sha256};
use aa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::layout::Layout;
use crate::lock::DirLock;
use crate::provenance::{comment_lines, make_provenance, verify_config_echo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Phase {
    Prior,
    Aa,
    Ablation,
}

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub phase: Phase,
    /// Checkpoint the aware run continues from; default is the prior
    /// phase's checkpoint.
    pub init: Option<PathBuf>,
    /// Start the aware run from fresh parameters instead of a checkpoint.
    pub cold_start: bool,
}

/// Run report as persisted: the report itself plus the provenance block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReportFile {
    #[serde(flatten)]
    pub report: RunReport,
    pub provenance: Provenance,
}

/// Ablation sweep summary as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReportFile {
    pub probe_class: String,
    /// Probe centering under the shared prior (awareness count 0).
    pub prior_probe_centering: f64,
    pub prior_final_train_acc: f64,
    pub prior_final_test_acc: f64,
    pub prior_checkpoint: String,
    pub steps: Vec<AblationStepFile>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationStepFile {
    pub aware_classes: Vec<String>,
    pub probe_centering: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub checkpoint: String,
}

pub fn run(config: &ExperimentConfig, opts: &TrainOpts) -> Result<()> {
    let layout = super::prepared_layout(config)?;
    let _lock = DirLock::acquire(&layout)?;
    verify_config_echo(&layout, config)?;

    let normal = super::load_merged(&layout, &config.generator.normal_classes)?;
    let arch = config.architecture();
    let train_seed = derive_seed(config.seed, "train");

    match opts.phase {
        Phase::Prior => run_prior(config, &layout, &normal, &arch, train_seed),
        Phase::Aa => run_aa(config, opts, &layout, &normal, &arch, train_seed),
        Phase::Ablation => run_ablation(config, &layout, &normal, &arch, train_seed),
    }
}

fn run_prior(
    config: &ExperimentConfig,
    layout: &Layout,
    normal: &Dataset,
    arch: &Architecture,
    train_seed: u64,
) -> Result<()> {
    let tc = config
        .training
        .to_train_config(train_seed, 0.0, config.training.epochs, Vec::new());
    let outcome = prior_run(normal, arch, &tc)?;
    let inputs = super::dataset_digests(layout, &config.generator.normal_classes)?;
    persist_run(config, layout, "prior", outcome, inputs)
}

fn run_aa(
    config: &ExperimentConfig,
    opts: &TrainOpts,
    layout: &Layout,
    normal: &Dataset,
    arch: &Architecture,
    train_seed: u64,
) -> Result<()> {
    let g = &config.generator;
    if g.anomaly_classes.is_empty() {
        return Err(Error::config(
            "the aware phase needs generator.anomaly_classes to be non-empty",
        ));
    }
    let anomalies = super::load_merged(layout, &g.anomaly_classes)?;

    let mut inputs = super::dataset_digests(layout, &g.normal_classes)?;
    inputs.extend(super::dataset_digests(layout, &g.anomaly_classes)?);

    let (init, start_epoch) = resolve_init(opts, layout, arch, train_seed, &mut inputs)?;

    let epochs = config.training.aa_epochs.unwrap_or(config.training.epochs);
    let tc = config.training.to_train_config(
        train_seed,
        config.training.lambda_aa,
        epochs,
        g.anomaly_classes.clone(),
    );
    let outcome = aa_run(normal, &anomalies, &tc, &init, start_epoch)?;
    persist_run(config, layout, "aa", outcome, inputs)
}

/// Initial parameters for the aware phase: an explicit `--init`
/// checkpoint, the prior phase's checkpoint, or (only with
/// `--cold-start`) fresh parameters at epoch 0.
fn resolve_init(
    opts: &TrainOpts,
    layout: &Layout,
    arch: &Architecture,
    train_seed: u64,
    inputs: &mut Vec<(String, String)>,
) -> Result<(NetworkParams, usize)> {
    let default_path = layout.checkpoint("prior");
    let path = opts.init.clone().unwrap_or(default_path);
    if path.exists() {
        let (params, meta) = load_checkpoint(&path)?;
        if &params.arch != arch {
            return Err(Error::config(format!(
                "initial checkpoint {} was trained with a different architecture",
                path.display()
            )));
        }
        inputs.push(("init_checkpoint".to_string(), file_sha256(&path)?));
        return Ok((params, meta.epoch));
    }
    if opts.cold_start {
        return Ok((init_params(arch, derive_seed(train_seed, "init"))?, 0));
    }
    Err(Error::config(format!(
        "no initial checkpoint at {} — run `aa train --phase prior` first, point --init at a \
         checkpoint, or pass --cold-start",
        path.display()
    )))
}

fn run_ablation(
    config: &ExperimentConfig,
    layout: &Layout,
    normal: &Dataset,
    arch: &Architecture,
    train_seed: u64,
) -> Result<()> {
    let ab = config.ablation.as_ref().ok_or_else(|| {
        Error::config("the ablation phase needs an `ablation` section in the config")
    })?;
    let pool: Vec<Dataset> = ab
        .pool
        .iter()
        .map(|c| super::load_class_dataset(layout, c))
        .collect::<Result<_>>()?;
    let pool_refs: Vec<&Dataset> = pool.iter().collect();
    let probe = super::load_class_dataset(layout, &ab.probe)?;

    let mut inputs = super::dataset_digests(layout, &config.generator.normal_classes)?;
    inputs.extend(super::dataset_digests(layout, &ab.pool)?);
    inputs.extend(super::dataset_digests(layout, std::slice::from_ref(&ab.probe))?);

    let tc = config.training.to_train_config(
        train_seed,
        config.training.lambda_aa,
        config.training.epochs,
        Vec::new(),
    );
    let sweep = ablation_sweep(normal, &pool_refs, &probe, arch, &tc)?;

    let provenance = make_provenance(config, &inputs)?;

    let prior_path = layout.checkpoint("ablation_prior");
    save_run_checkpoint(config, &prior_path, &sweep.prior, "ablation_prior", &provenance)?;
    println!("wrote {}", layout.relative(&prior_path));

    let mut steps = Vec::new();
    for (i, step) in sweep.steps.iter().enumerate() {
        let name = format!("ablation_step{}", i + 1);
        let path = layout.checkpoint(&name);
        save_run_checkpoint(config, &path, &step.outcome, &name, &provenance)?;
        println!("wrote {}", layout.relative(&path));
        steps.push(AblationStepFile {
            aware_classes: step.aware_classes.clone(),
            probe_centering: step.probe_centering,
            final_train_acc: step.outcome.report.final_train_acc,
            final_test_acc: step.outcome.report.final_test_acc,
            checkpoint: layout.relative(&path),
        });
    }

    let file = AblationReportFile {
        probe_class: sweep.probe_class.clone(),
        prior_probe_centering: sweep.prior_probe_centering,
        prior_final_train_acc: sweep.prior.report.final_train_acc,
        prior_final_test_acc: sweep.prior.report.final_test_acc,
        prior_checkpoint: layout.relative(&prior_path),
        steps,
        provenance,
    };
    let path = layout.ablation_report();
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("ablation report serialization: {e}")))?;
    std::fs::write(&path, json + "\n")?;
    println!("wrote {}", layout.relative(&path));
    Ok(())
}

/// Saves checkpoint + run report JSON + loss CSV for one training run.
fn persist_run(
    config: &ExperimentConfig,
    layout: &Layout,
    phase: &str,
    outcome: TrainOutcome,
    inputs: Vec<(String, String)>,
) -> Result<()> {
    let provenance = make_provenance(config, &inputs)?;

    let ckpt_path = layout.checkpoint(phase);
    save_run_checkpoint(config, &ckpt_path, &outcome, phase, &provenance)?;

    let mut report = outcome.report;
    report.checkpoint = Some(layout.relative(&ckpt_path));

    let file = TrainReportFile { report, provenance: provenance.clone() };
    let report_path = layout.run_report(phase);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("run report serialization: {e}")))?;
    std::fs::write(&report_path, json + "\n")?;

    let loss_path = layout.loss_csv(phase);
    let mut comments = vec![format!("phase={phase}")];
    comments.extend(comment_lines(&provenance));
    write_loss_csv(&loss_path, &file.report, &comments)?;

    println!(
        "wrote {} (sha256={})",
        layout.relative(&ckpt_path),
        file_sha256(&ckpt_path)?
    );
    println!("wrote {}", layout.relative(&report_path));
    println!("wrote {}", layout.relative(&loss_path));
    println!(
        "final accuracy: train={} test={}",
        file.report.final_train_acc, file.report.final_test_acc
    );
    Ok(())
}

fn save_run_checkpoint(
    config: &ExperimentConfig,
    path: &std::path::Path,
    outcome: &TrainOutcome,
    phase: &str,
    provenance: &Provenance,
) -> Result<()> {
    let report = &outcome.report;
    let tc = &report.config;
    let mut metadata: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    metadata.insert("phase".into(), serde_json::json!(phase));
    metadata.insert(
        "classes".into(),
        serde_json::json!(config.generator.normal_classes),
    );
    metadata.insert("lambda_aa".into(), serde_json::json!(tc.lambda_aa));
    metadata.insert(
        "anomaly_classes".into(),
        serde_json::json!(tc.anomaly_classes),
    );
    metadata.insert("start_epoch".into(), serde_json::json!(report.start_epoch));
    metadata.insert(
        "final_train_acc".into(),
        serde_json::json!(report.final_train_acc),
    );
    metadata.insert(
        "final_test_acc".into(),
        serde_json::json!(report.final_test_acc),
    );
    let meta = CheckpointMeta {
        seed: config.seed,
        epoch: report.start_epoch + tc.epochs,
        optimizer: optimizer_info(tc),
        metadata,
        provenance: Some(provenance.clone()),
    };
    save_checkpoint(path, &outcome.params, &meta)
}

fn optimizer_info(tc: &TrainConfig) -> OptimizerInfo {
    match tc.optimizer {
        Optimizer::Sgd => OptimizerInfo {
            name: "sgd".into(),
            learning_rate: tc.learning_rate,
            beta1: None,
            beta2: None,
            epsilon: None,
        },
        Optimizer::Adam => {
            let h = aa_core::network::AdamHyper::default();
            OptimizerInfo {
                name: "adam".into(),
                learning_rate: tc.learning_rate,
                beta1: Some(h.beta1),
                beta2: Some(h.beta2),
                epsilon: Some(h.epsilon),
            }
        }
    }
}
