//! `aa eval`: score datasets with a trained checkpoint.
//!
//! Writes one score CSV per class (test split), one combined score file
//! over all classes for the window scan, per-class output histograms,
//! ROC curves for every normal-class pair, and — with three or more
//! outputs — 2-D output densities. The eval report also re-measures the
//! train-split accuracy, which must reproduce the training report's
//! value: both come from the same quantized parameters.

use std::collections::BTreeMap;

use aa_core::analysis::{
    centering_metric, pdf_histogram, roc_auc, score_split, simplex_pdf, write_scores, ScoreMeta,
    ScoreRecord,
};
use aa_core::eventgen::Provenance;
use aa_core::network::load_checkpoint;
use aa_core::util::file_sha256;
use aa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::lock::DirLock;
use crate::provenance::{comment_lines, make_provenance, verify_config_echo};

#[derive(Debug, Clone)]
pub struct EvalOpts {
    /// Checkpoint name under `checkpoints/` ("prior", "aa", ...).
    pub phase: String,
}

/// Eval summary as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub checkpoint: String,
    pub model_sha256: String,
    /// Output class names, index-aligned with probability columns.
    pub class_names: Vec<String>,
    /// Accuracy over the normal classes' train split; reproduces the
    /// training report's final value exactly.
    pub train_accuracy: f64,
    /// Accuracy over the normal classes' test split.
    pub test_accuracy: f64,
    /// Area under the ROC for each normal-class pair, keyed
    /// `<positive>_vs_<negative>`.
    pub aucs: BTreeMap<String, f64>,
    /// Mean distance of the top output from certainty, per class
    /// (test split): mean(1 - max_k p_k).
    pub centering: BTreeMap<String, f64>,
    pub score_files: BTreeMap<String, String>,
    pub histogram_files: BTreeMap<String, String>,
    pub roc_files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub simplex_files: BTreeMap<String, String>,
    pub provenance: Provenance,
}

pub fn run(config: &ExperimentConfig, opts: &EvalOpts) -> Result<()> {
    let layout = super::prepared_layout(config)?;
    let _lock = DirLock::acquire(&layout)?;
    verify_config_echo(&layout, config)?;

    let ckpt_path = layout.checkpoint(&opts.phase);
    if !ckpt_path.exists() {
        return Err(Error::lookup(format!(
            "no checkpoint at {} — run `aa train` first",
            ckpt_path.display()
        )));
    }
    let (params, _meta) = load_checkpoint(&ckpt_path)?;
    let model_sha256 = file_sha256(&ckpt_path)?;

    let g = &config.generator;
    let class_names = g.normal_classes.clone();
    if params.arch.num_classes != class_names.len() {
        return Err(Error::config(format!(
            "checkpoint has {} output classes but the config lists {} normal classes",
            params.arch.num_classes,
            class_names.len()
        )));
    }

    let all_classes = g.all_classes();
    let mut inputs = vec![("checkpoint".to_string(), model_sha256.clone())];
    inputs.extend(super::dataset_digests(&layout, &all_classes)?);
    let provenance = make_provenance(config, &inputs)?;
    let comments = {
        let mut c = vec![format!("checkpoint_phase={}", opts.phase)];
        c.extend(comment_lines(&provenance));
        c
    };

    // Per-class test-split scores.
    let mut per_class: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    let mut score_files = BTreeMap::new();
    for class in &all_classes {
        let ds = super::load_class_dataset(&layout, class)?;
        let records = score_split(&params, &ds, "test")?;
        let csv = layout.score_csv(&opts.phase, class);
        let meta_path = layout.score_meta(&opts.phase, class);
        let meta = ScoreMeta {
            model_sha256: model_sha256.clone(),
            class_names: class_names.clone(),
            record_count: records.len(),
            provenance: Some(provenance.clone()),
        };
        write_scores(&csv, &meta_path, &records, &meta, &comments)?;
        println!("wrote {} ({} records)", layout.relative(&csv), records.len());
        score_files.insert(class.clone(), layout.relative(&csv));
        per_class.insert(class.clone(), records);
    }

    // Combined score file over every class, scanned later.
    let merged_all = super::load_merged(&layout, &all_classes)?;
    let all_records = score_split(&params, &merged_all, "test")?;
    {
        let csv = layout.score_csv(&opts.phase, "all");
        let meta_path = layout.score_meta(&opts.phase, "all");
        let meta = ScoreMeta {
            model_sha256: model_sha256.clone(),
            class_names: class_names.clone(),
            record_count: all_records.len(),
            provenance: Some(provenance.clone()),
        };
        write_scores(&csv, &meta_path, &all_records, &meta, &comments)?;
        println!(
            "wrote {} ({} records)",
            layout.relative(&csv),
            all_records.len()
        );
        score_files.insert("all".to_string(), layout.relative(&csv));
    }

    // Normal-split accuracies from the same merged view training used.
    let merged_normal = super::load_merged(&layout, &class_names)?;
    let train_records = score_split(&params, &merged_normal, "train")?;
    let train_accuracy = accuracy(&train_records, &class_names)?;
    let test_records = score_split(&params, &merged_normal, "test")?;
    let test_accuracy = accuracy(&test_records, &class_names)?;

    // Output-probability histograms on the configured axis.
    let axis_class = config.axis_class();
    let axis = class_names
        .iter()
        .position(|c| c == &axis_class)
        .ok_or_else(|| Error::config(format!("axis class '{axis_class}' is not an output")))?;
    let mut histogram_files = BTreeMap::new();
    for (class, records) in &per_class {
        let hist = pdf_histogram(records, axis, config.analysis.histogram_bins)?;
        let path = layout.hist_csv(&opts.phase, class);
        let mut out = String::new();
        for c in &comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(&format!("# class={class} axis_class={axis_class}\n"));
        out.push_str("bin_lo,bin_hi,density\n");
        for (i, d) in hist.densities.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", hist.edges[i], hist.edges[i + 1], d));
        }
        std::fs::write(&path, out)?;
        histogram_files.insert(class.clone(), layout.relative(&path));
    }

    // ROC for every normal-class pair: later class is the positive.
    let mut aucs = BTreeMap::new();
    let mut roc_files = BTreeMap::new();
    for i in 0..class_names.len() {
        for j in (i + 1)..class_names.len() {
            let (neg, pos) = (&class_names[i], &class_names[j]);
            let (curve, auc) = roc_auc(&test_records, pos, neg, j)?;
            let path = layout.roc_csv(&opts.phase, pos, neg);
            let mut out = String::new();
            for c in &comments {
                out.push_str(&format!("# {c}\n"));
            }
            out.push_str(&format!("# positive={pos} negative={neg} auc={auc}\n"));
            out.push_str("fpr,tpr\n");
            for (fpr, tpr) in &curve {
                out.push_str(&format!("{fpr},{tpr}\n"));
            }
            std::fs::write(&path, out)?;
            let key = format!("{pos}_vs_{neg}");
            aucs.insert(key.clone(), auc);
            roc_files.insert(key, layout.relative(&path));
        }
    }

    // 2-D output densities over the first two axes, when they exist.
    let mut simplex_files = BTreeMap::new();
    if class_names.len() >= 3 {
        for (class, records) in &per_class {
            let density = simplex_pdf(records, (0, 1), config.analysis.histogram_bins)?;
            let path = layout.simplex_json(&opts.phase, class);
            let json = serde_json::to_string_pretty(&density)
                .map_err(|e| Error::Format(format!("density serialization: {e}")))?;
            std::fs::write(&path, json + "\n")?;
            simplex_files.insert(class.clone(), layout.relative(&path));
        }
    }

    let mut centering = BTreeMap::new();
    for (class, records) in &per_class {
        centering.insert(class.clone(), centering_metric(records, class)?);
    }

    let file = EvalReportFile {
        checkpoint: layout.relative(&ckpt_path),
        model_sha256,
        class_names,
        train_accuracy,
        test_accuracy,
        aucs,
        centering,
        score_files,
        histogram_files,
        roc_files,
        simplex_files,
        provenance,
    };
    let path = layout.eval_report(&opts.phase);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("eval report serialization: {e}")))?;
    std::fs::write(&path, json + "\n")?;
    println!("wrote {}", layout.relative(&path));
    println!(
        "accuracy: train={} test={}",
        file.train_accuracy, file.test_accuracy
    );
    Ok(())
}

/// Fraction of records whose highest output matches their class; ties
/// resolve to the first maximum, matching training accuracy.
fn accuracy(records: &[ScoreRecord], class_names: &[String]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("accuracy over no records".into()));
    }
    let index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut correct = 0usize;
    for rec in records {
        let want = *index.get(rec.true_class.as_str()).ok_or_else(|| {
            Error::lookup(format!("record class '{}' is not an output class", rec.true_class))
        })?;
        let mut best = 0usize;
        for (k, &p) in rec.probs.iter().enumerate() {
            if p > rec.probs[best] {
                best = k;
            }
        }
        if best == want {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}
