//! Minibatch training: the prior run and the anomaly-aware run.
//!
//! The prior run minimizes mean cross-entropy over the normal classes.
//! The anomaly-aware run continues from a prior checkpoint and minimizes
//! `l1 + lambda_aa * l2` per step, where `l1` is the normal-batch
//! cross-entropy and `l2` is the uniform-target cross-entropy of an
//! anomaly minibatch drawn (with replacement) from the known-anomaly
//! classes. Pushing anomalies toward the uniform output vector
//! concentrates them near the center of the probability simplex, away
//! from the one-hot corners where normal events live — the signature the
//! detection scan exploits.
//!
//! # Determinism
//!
//! Every run is a sequential schedule driven by three RNG streams derived
//! from `config.seed` with domain-separated tags:
//!
//! * `"init"` — He initialization of fresh parameters,
//! * `"shuffle"` — per-epoch Fisher-Yates shuffling of the normal
//!   training split (stream index = absolute epoch number),
//! * `"anomaly"` — with-replacement anomaly sampling (stream index =
//!   absolute epoch number).
//!
//! Indexing streams by the absolute epoch makes a continuation from epoch
//! E bitwise identical to the tail of a longer run, and makes the
//! `lambda_aa = 0` anomaly-aware run bitwise identical to a plain prior
//! continuation: the anomaly path touches its own stream and its own
//! buffers only, and contributes nothing to the update when the weight
//! is zero.

use crate::error::{Error, Result};
use crate::eventgen::Dataset;
use crate::network::{
    adam_step, backward_full, forward_batch, init_params, loss_only, sgd_step, AdamHyper,
    AdamMoments, Architecture, NetworkParams,
};
use crate::util::derive_seed;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Parameter-update rule. Adam is the default; plain SGD is kept for
/// diagnostics and tiny fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam
    }
}

fn default_mix_ratio() -> f64 {
    1.0
}

/// Configuration of one training run (prior or anomaly-aware).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the uniform-target anomaly loss term; 0 disables it.
    #[serde(default)]
    pub lambda_aa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Anomaly classes included in the awareness term, in mixture order.
    #[serde(default)]
    pub anomaly_classes: Vec<String>,
    /// Anomaly examples drawn per normal example per step.
    #[serde(default = "default_mix_ratio")]
    pub anomaly_mix_ratio: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_aa >= 0.0) || !self.lambda_aa.is_finite() {
            return Err(Error::config(format!(
                "lambda_aa must be a finite scalar >= 0, got {}",
                self.lambda_aa
            )));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning_rate must be a finite scalar > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.anomaly_mix_ratio > 0.0) || !self.anomaly_mix_ratio.is_finite() {
            return Err(Error::config(format!(
                "anomaly_mix_ratio must be a finite scalar > 0, got {}",
                self.anomaly_mix_ratio
            )));
        }
        let mut seen = BTreeSet::new();
        for class in &self.anomaly_classes {
            if !seen.insert(class) {
                return Err(Error::config(format!(
                    "anomaly class '{class}' listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Loss and accuracy bookkeeping for one epoch.
///
/// `l1`, `l2` and `total` are means over the epoch's steps weighted by
/// normal-batch size, with `total` accumulated independently as
/// `l1 + lambda_aa * l2` per step so the decomposition identity is a real
/// cross-check of the bookkeeping. Steps that drew no anomaly examples
/// contribute `l2 = 0`. `train_acc` is the running accuracy over the
/// epoch's training batches (parameters move between batches);
/// `test_acc` is measured on the test split with end-of-epoch parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Everything a finished run reports besides the parameters themselves.
///
/// Final accuracies are computed from the f32-quantized parameters that
/// the checkpoint stores, so reloading the checkpoint reproduces them
/// bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    /// Absolute epoch index this run started at (0 for a fresh prior).
    pub start_epoch: usize,
    pub epochs: Vec<EpochStats>,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    /// Reference to the saved checkpoint, filled in by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Trained parameters (f32-quantized, matching the checkpoint format)
/// plus the run's report.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub report: RunReport,
}

/// Writes the per-epoch loss curve as CSV:
/// `epoch,l1,l2,total,train_acc,test_acc`.
pub fn write_loss_csv(path: &Path, report: &RunReport, comments: &[String]) -> Result<()> {
    let mut out = String::new();
    for c in comments {
        writeln!(out, "# {c}").expect("in-memory write");
    }
    out.push_str("epoch,l1,l2,total,train_acc,test_acc\n");
    for e in &report.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch, e.l1, e.l2, e.total, e.train_acc, e.test_acc
        )
        .expect("in-memory write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn validate_prob_vector(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("empty probability vector".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::numeric("probability vector has negative or non-finite entry"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::numeric(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Cross-entropy `-ln probs[target]` of one probability vector.
///
/// Diagnostic form operating on explicit probabilities; the training loop
/// itself computes the same quantity in stabilized log-sum-exp form from
/// logits. A zero probability at the target has infinite loss and is
/// rejected.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    validate_prob_vector(probs)?;
    let p = *probs.get(target).ok_or_else(|| {
        Error::dimension(format!("target < {}", probs.len()), format!("target {target}"))
    })?;
    if p == 0.0 {
        return Err(Error::numeric("cross-entropy of a zero probability is infinite"));
    }
    Ok(-p.ln())
}

/// Uniform-target cross-entropy `-(1/K) * sum_k ln probs[k]`.
///
/// By Jensen's inequality this is at least `ln K`, with equality exactly
/// at the uniform vector — minimizing it drives outputs toward the center
/// of the probability simplex.
pub fn uniform_cross_entropy(probs: &[f64]) -> Result<f64> {
    validate_prob_vector(probs)?;
    if probs.iter().any(|p| *p == 0.0) {
        return Err(Error::numeric("uniform cross-entropy of a zero probability is infinite"));
    }
    let k = probs.len() as f64;
    Ok(-probs.iter().map(|p| p.ln()).sum::<f64>() / k)
}

/// Trains a fresh classifier on the normal classes.
///
/// Parameters are He-initialized from the seed's `"init"` stream;
/// `config.lambda_aa` and the anomaly fields are ignored. The dataset's
/// class order defines the output-layer order.
pub fn prior_run(normal: &Dataset, arch: &Architecture, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let init = init_params(arch, derive_seed(config.seed, "init"))?;
    run_training(normal, None, config, init, 0)
}

/// Continues normal-class training from existing parameters, starting at
/// the given absolute epoch (which selects the shuffle streams).
pub fn prior_continuation(
    normal: &Dataset,
    config: &TrainConfig,
    init: &NetworkParams,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    run_training(normal, None, config, init.clone(), start_epoch)
}

/// The anomaly-aware run: continues from `init` (typically the prior
/// checkpoint) minimizing `l1 + lambda_aa * l2`.
///
/// `start_epoch` is the absolute epoch the run begins at — passing the
/// prior run's epoch count makes this a continuation on aligned shuffle
/// streams, which is what the `lambda_aa = 0` equivalence contract is
/// stated over. The anomaly dataset's classes must match
/// `config.anomaly_classes` exactly.
pub fn aa_run(
    normal: &Dataset,
    anomalies: &Dataset,
    config: &TrainConfig,
    init: &NetworkParams,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if anomalies.is_empty() {
        if config.lambda_aa > 0.0 {
            return Err(Error::config(
                "anomaly-aware run with lambda_aa > 0 needs a non-empty anomaly dataset",
            ));
        }
        return run_training(normal, None, config, init.clone(), start_epoch);
    }
    let declared: BTreeSet<&String> = config.anomaly_classes.iter().collect();
    let present: BTreeSet<&String> = anomalies.classes.iter().collect();
    if declared != present {
        return Err(Error::config(format!(
            "anomaly dataset classes {:?} do not match declared anomaly_classes {:?}",
            anomalies.classes, config.anomaly_classes
        )));
    }
    run_training(normal, Some(anomalies), config, init.clone(), start_epoch)
}

/// One step of the cumulative awareness sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationStep {
    /// Anomaly classes the run was aware of, in mixture order.
    pub aware_classes: Vec<String>,
    pub outcome: TrainOutcome,
    /// Centering metric of the probe class on the probe's test split.
    pub probe_centering: f64,
}

/// Result of [`ablation_sweep`]: the shared prior plus one AA run per
/// cumulative pool prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub prior: TrainOutcome,
    pub prior_probe_centering: f64,
    pub probe_class: String,
    pub steps: Vec<AblationStep>,
}

/// Cumulative awareness sweep: trains one shared prior, then one AA run
/// per pool prefix (classes `0..=j`), tracking how the probe class's
/// centering metric responds as awareness grows.
///
/// Every pool entry must hold exactly one class, all distinct. The probe
/// is scored on its own test split after each run; it may share a class
/// with a (typically late) pool entry — its centering while still unseen
/// versus after becoming aware is exactly the saturation contrast — or be
/// absent from the pool entirely, in which case it stays unseen
/// throughout. At least two distinct classes must be involved overall.
pub fn ablation_sweep(
    normal: &Dataset,
    anomaly_pool: &[&Dataset],
    probe: &Dataset,
    arch: &Architecture,
    config: &TrainConfig,
) -> Result<AblationReport> {
    config.validate()?;
    if anomaly_pool.is_empty() {
        return Err(Error::config("ablation sweep needs a non-empty anomaly pool"));
    }
    let mut pool_classes = Vec::new();
    for part in anomaly_pool {
        if part.classes.len() != 1 {
            return Err(Error::config(format!(
                "each ablation pool entry must hold exactly one class, got {:?}",
                part.classes
            )));
        }
        let class = part.classes[0].clone();
        if pool_classes.contains(&class) {
            return Err(Error::config(format!(
                "class '{class}' appears twice in the ablation pool"
            )));
        }
        pool_classes.push(class);
    }
    if probe.classes.len() != 1 {
        return Err(Error::config(format!(
            "ablation probe must hold exactly one class, got {:?}",
            probe.classes
        )));
    }
    let probe_class = probe.classes[0].clone();
    let distinct: BTreeSet<&String> = pool_classes.iter().chain([&probe_class]).collect();
    if distinct.len() < 2 {
        return Err(Error::config(
            "ablation sweep needs at least two distinct classes across pool and probe",
        ));
    }

    let prior = prior_run(normal, arch, config)?;
    let prior_probe_centering = probe_centering(&prior.params, probe, &probe_class)?;

    let mut steps = Vec::with_capacity(anomaly_pool.len());
    for j in 1..=anomaly_pool.len() {
        let anomalies = crate::eventgen::merge_datasets(&anomaly_pool[..j])?;
        let step_config = TrainConfig {
            anomaly_classes: pool_classes[..j].to_vec(),
            ..config.clone()
        };
        let outcome = aa_run(normal, &anomalies, &step_config, &prior.params, config.epochs)?;
        let centering = probe_centering(&outcome.params, probe, &probe_class)?;
        steps.push(AblationStep {
            aware_classes: pool_classes[..j].to_vec(),
            outcome,
            probe_centering: centering,
        });
    }
    Ok(AblationReport { prior, prior_probe_centering, probe_class, steps })
}

fn probe_centering(params: &NetworkParams, probe: &Dataset, class: &str) -> Result<f64> {
    let records = crate::analysis::score_split(params, probe, "test")?;
    crate::analysis::centering_metric(&records, class)
}

// ------------------------------------------------------------ the engine

/// Pixel rows (sum-normalized) and index-aligned labels for a batch.
fn batch_rows(ds: &Dataset, indices: &[usize], dim: usize) -> Result<Array2<f64>> {
    let mut rows = Array2::<f64>::zeros((indices.len(), dim));
    for (r, &i) in indices.iter().enumerate() {
        let im = &ds.images[i];
        if im.pixels.len() != dim {
            return Err(Error::dimension(
                format!("{dim} pixels"),
                format!("{}", im.pixels.len()),
            ));
        }
        for (c, v) in im.normalized()?.into_iter().enumerate() {
            rows[[r, c]] = v;
        }
    }
    Ok(rows)
}

fn one_hot_targets(labels: &[usize], k: usize) -> Array2<f64> {
    let mut t = Array2::<f64>::zeros((labels.len(), k));
    for (r, &l) in labels.iter().enumerate() {
        t[[r, l]] = 1.0;
    }
    t
}

fn argmax_row(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of the given images whose predicted class matches the label.
fn dataset_accuracy(params: &NetworkParams, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("accuracy over an empty index set".into()));
    }
    let dim = params.arch.input_h * params.arch.input_w;
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let rows = batch_rows(ds, chunk, dim)?;
        let trace = forward_batch(params, rows.view())?;
        for (r, &i) in chunk.iter().enumerate() {
            let label = ds.class_index(&ds.images[i].label)?;
            if argmax_row(trace.probs.row(r)) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Per-class train-split index lists for the anomaly dataset, in class
/// declaration order.
fn anomaly_class_pools(anomalies: &Dataset) -> Result<Vec<(String, Vec<usize>)>> {
    let mut pools = Vec::with_capacity(anomalies.classes.len());
    for class in &anomalies.classes {
        let members: Vec<usize> = anomalies
            .split
            .train
            .iter()
            .copied()
            .filter(|&i| anomalies.images[i].label == *class)
            .collect();
        if members.is_empty() {
            return Err(Error::config(format!(
                "anomaly class '{class}' has no training examples to sample"
            )));
        }
        pools.push((class.clone(), members));
    }
    Ok(pools)
}

/// Draws the step's anomaly minibatch: `round(batch * ratio)` examples
/// stratified equally across classes, the remainder rotating with the
/// step counter so no class is systematically favored. Samples with
/// replacement from each class's training split.
fn sample_anomaly_batch(
    pools: &[(String, Vec<usize>)],
    normal_batch: usize,
    ratio: f64,
    step: u64,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    let total = (normal_batch as f64 * ratio).round() as usize;
    let n_cls = pools.len();
    let base = total / n_cls;
    let rem = total % n_cls;
    let start = (step % n_cls as u64) as usize;
    let mut batch = Vec::with_capacity(total);
    for (c, (_, members)) in pools.iter().enumerate() {
        let extra = ((c + n_cls - start) % n_cls < rem) as usize;
        for _ in 0..base + extra {
            batch.push(members[rng.gen_range(0..members.len())]);
        }
    }
    batch
}

fn run_training(
    normal: &Dataset,
    anomalies: Option<&Dataset>,
    config: &TrainConfig,
    init: NetworkParams,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    let arch = init.arch.clone();
    let k = arch.num_classes;
    if normal.classes.len() != k {
        return Err(Error::config(format!(
            "network has {k} outputs but the normal dataset declares {} classes",
            normal.classes.len()
        )));
    }
    if (normal.grid_h, normal.grid_w) != (arch.input_h, arch.input_w) {
        return Err(Error::config(format!(
            "network expects {}x{} inputs but the normal dataset is {}x{}",
            arch.input_h, arch.input_w, normal.grid_h, normal.grid_w
        )));
    }
    if normal.split.train.is_empty() {
        return Err(Error::config("normal dataset has an empty training split"));
    }
    if normal.split.test.is_empty() {
        return Err(Error::config("normal dataset has an empty test split"));
    }
    let pools = match anomalies {
        Some(an) => {
            if (an.grid_h, an.grid_w) != (arch.input_h, arch.input_w) {
                return Err(Error::config(format!(
                    "network expects {}x{} inputs but the anomaly dataset is {}x{}",
                    arch.input_h, arch.input_w, an.grid_h, an.grid_w
                )));
            }
            anomaly_class_pools(an)?
        }
        None => Vec::new(),
    };

    let dim = arch.input_h * arch.input_w;
    let lambda = config.lambda_aa;
    let mut params = init;
    let mut adam = AdamMoments::zeros(params.flat_view().len());
    let adam_hyper = AdamHyper {
        learning_rate: config.learning_rate,
        ..AdamHyper::default()
    };
    // Pre-resolved labels of the normal training split, in split order.
    let train_labels: Vec<usize> = normal
        .split
        .train
        .iter()
        .map(|&i| normal.class_index(&normal.images[i].label))
        .collect::<Result<_>>()?;
    let uniform_row = vec![1.0 / k as f64; k];

    let mut epochs_out = Vec::with_capacity(config.epochs);
    let mut step_counter: u64 = 0;
    let shuffle_seed = derive_seed(config.seed, "shuffle");
    let anomaly_seed = derive_seed(config.seed, "anomaly");

    for epoch in start_epoch..start_epoch + config.epochs {
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(shuffle_seed);
        shuffle_rng.set_stream(epoch as u64);
        let mut anomaly_rng = ChaCha12Rng::seed_from_u64(anomaly_seed);
        anomaly_rng.set_stream(epoch as u64);

        // Shuffle positions into the training split, then take batches.
        let mut order: Vec<usize> = (0..normal.split.train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let (mut l1_sum, mut l2_sum, mut total_sum, mut weight) = (0.0, 0.0, 0.0, 0.0);
        let mut train_correct = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let image_idx: Vec<usize> = chunk.iter().map(|&p| normal.split.train[p]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&p| train_labels[p]).collect();
            let rows = batch_rows(normal, &image_idx, dim)?;
            let targets = one_hot_targets(&labels, k);
            let (l1, trace, mut grad) = backward_full(&params, rows.view(), targets.view())?;
            for (r, &label) in labels.iter().enumerate() {
                if argmax_row(trace.probs.row(r)) == label {
                    train_correct += 1;
                }
            }

            let mut l2 = 0.0;
            if !pools.is_empty() {
                let sample = sample_anomaly_batch(
                    &pools,
                    chunk.len(),
                    config.anomaly_mix_ratio,
                    step_counter,
                    &mut anomaly_rng,
                );
                if !sample.is_empty() {
                    let an = anomalies.expect("pools imply anomalies");
                    let a_rows = batch_rows(an, &sample, dim)?;
                    let mut a_targets = Array2::<f64>::zeros((sample.len(), k));
                    for mut row in a_targets.rows_mut() {
                        for (c, v) in row.iter_mut().enumerate() {
                            *v = uniform_row[c];
                        }
                    }
                    if lambda > 0.0 {
                        let (l2_val, _, a_grad) =
                            backward_full(&params, a_rows.view(), a_targets.view())?;
                        l2 = l2_val;
                        for (g, ag) in grad.iter_mut().zip(&a_grad) {
                            *g += lambda * ag;
                        }
                    } else {
                        // Weight zero: evaluate the loss for the report but
                        // leave the update untouched so the run stays
                        // bitwise identical to a plain continuation.
                        l2 = loss_only(&params, a_rows.view(), a_targets.view())?;
                    }
                }
            }

            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut params, &grad, config.learning_rate)?,
                Optimizer::Adam => adam_step(&mut params, &grad, &mut adam, &adam_hyper)?,
            }

            let w = chunk.len() as f64;
            l1_sum += w * l1;
            l2_sum += w * l2;
            total_sum += w * (l1 + lambda * l2);
            weight += w;
            step_counter += 1;
        }

        let test_acc = dataset_accuracy(&params, normal, &normal.split.test)?;
        epochs_out.push(EpochStats {
            epoch,
            l1: l1_sum / weight,
            l2: l2_sum / weight,
            total: total_sum / weight,
            train_acc: train_correct as f64 / normal.split.train.len() as f64,
            test_acc,
        });
    }

    // Quantize to the checkpoint's storage precision before the final
    // metrics so a reloaded checkpoint reproduces them bitwise.
    params.quantize_f32();
    let final_train_acc = dataset_accuracy(&params, normal, &normal.split.train)?;
    let final_test_acc = dataset_accuracy(&params, normal, &normal.split.test)?;

    Ok(TrainOutcome {
        params,
        report: RunReport {
            config: config.clone(),
            start_epoch,
            epochs: epochs_out,
            final_train_acc,
            final_test_acc,
            checkpoint: None,
        },
    })
}
