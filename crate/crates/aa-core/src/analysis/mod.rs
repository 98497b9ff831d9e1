//! Detection statistics on classifier outputs.
//!
//! A trained network maps events to softmax vectors; anomalies that the
//! classifier cannot attribute to any normal class concentrate away from
//! the one-hot corners of that output space. This module extracts score
//! records, builds the diagnostic densities and ROC curves, and runs the
//! selection-window scan: efficiencies per origin class, the window
//! figure of merit R = eps_anomaly / sqrt(sum sigma_bkg * eps_bkg), the
//! best window R_max, and the discovery-reach projections derived from
//! the N_anomaly / sqrt(N_SM) = 5 benchmark.

mod format;

pub use format::{
    read_scores, write_scan_csv, write_scan_json, write_scores, write_sigma_min_csv, ScoreMeta,
};

use crate::error::{Error, Result};
use crate::eventgen::Dataset;
use crate::network::{forward_batch, NetworkParams};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Softmax output of one event together with its origin label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub probs: Vec<f64>,
    /// Origin class of the event (normal or anomaly class name).
    pub true_class: String,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::EmptyInput("score record with no probabilities".into()));
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::numeric("score record has negative or non-finite entry"));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::numeric(format!("score record sums to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Per-class production cross-sections in femtobarns.
///
/// The default table uses 5e4 fb for the QCD-like class (the right order
/// of magnitude for the selection in the study) and a 2e3 fb placeholder
/// for the Top-like class; any physics-grade claim must supply measured
/// values through configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionTable(BTreeMap<String, f64>);

impl CrossSectionTable {
    pub fn new(map: BTreeMap<String, f64>) -> Result<CrossSectionTable> {
        for (class, sigma) in &map {
            if !(*sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::config(format!(
                    "cross-section for '{class}' must be finite and > 0, got {sigma}"
                )));
            }
        }
        Ok(CrossSectionTable(map))
    }

    pub fn get(&self, class: &str) -> Result<f64> {
        self.0
            .get(class)
            .copied()
            .ok_or_else(|| Error::lookup(format!("no cross-section for class '{class}'")))
    }

    pub fn classes(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn default_toy() -> CrossSectionTable {
        let mut m = BTreeMap::new();
        m.insert("qcd".to_string(), 5.0e4);
        m.insert("top".to_string(), 2.0e3);
        CrossSectionTable(m)
    }
}

/// Closed selection window `[p_min, p_max]` on one output axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub p_min: f64,
    pub p_max: f64,
    /// Output class index whose probability is windowed.
    pub axis: usize,
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_min && self.p_min < self.p_max && self.p_max <= 1.0) {
            return Err(Error::config(format!(
                "window [{}, {}] violates 0 <= p_min < p_max <= 1",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        // Closed on both ends so that delta = 1 is the complete window.
        self.p_min <= v && v <= self.p_max
    }
}

/// Window figure of merit. `ZeroBackground` flags windows where every
/// background efficiency vanished while the anomaly efficiency did not;
/// the Gaussian significance approximation breaks there, so such windows
/// are excluded from the R_max selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RMetric {
    Finite(f64),
    ZeroBackground,
}

impl RMetric {
    pub fn finite(&self) -> Option<f64> {
        match self {
            RMetric::Finite(v) => Some(*v),
            RMetric::ZeroBackground => None,
        }
    }
}

impl Serialize for RMetric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RMetric::Finite(v) => s.serialize_some(v),
            RMetric::ZeroBackground => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for RMetric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Option::<f64>::deserialize(d)?;
        Ok(match v {
            Some(x) => RMetric::Finite(x),
            None => RMetric::ZeroBackground,
        })
    }
}

/// One scanned window with its per-class efficiencies and figure of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window: Window,
    pub center: f64,
    /// Efficiency per origin class present in the records.
    pub efficiencies: BTreeMap<String, f64>,
    /// Binomial error sqrt(eps*(1-eps)/n) per class; informational only,
    /// not propagated into the R_max selection.
    pub eff_errors: BTreeMap<String, f64>,
    pub r: RMetric,
}

/// Full result of a window scan at one width delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub delta: f64,
    pub step: f64,
    pub axis: usize,
    pub anomaly_class: String,
    pub background_classes: Vec<String>,
    pub windows: Vec<WindowStats>,
    pub r_max: f64,
    pub best_window: Window,
    /// Number of windows excluded from R_max for zero background.
    pub zero_background_windows: usize,
}

/// Scores every event of the dataset in order; one record per event.
pub fn score_dataset(model: &NetworkParams, ds: &Dataset) -> Result<Vec<ScoreRecord>> {
    score_images(model, ds, 0..ds.len())
}

/// Scores the named split ("train" or "test") of the dataset, preserving
/// the split's index order.
pub fn score_split(model: &NetworkParams, ds: &Dataset, split: &str) -> Result<Vec<ScoreRecord>> {
    let indices = ds.split.named(split)?.to_vec();
    score_images(model, ds, indices.into_iter())
}

fn score_images(
    model: &NetworkParams,
    ds: &Dataset,
    indices: impl Iterator<Item = usize>,
) -> Result<Vec<ScoreRecord>> {
    let dim = model.arch.input_h * model.arch.input_w;
    let indices: Vec<usize> = indices.collect();
    let mut records = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(256) {
        let mut rows = Array2::<f64>::zeros((chunk.len(), dim));
        for (r, &i) in chunk.iter().enumerate() {
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
        let trace = forward_batch(model, rows.view())?;
        for (r, &i) in chunk.iter().enumerate() {
            records.push(ScoreRecord {
                probs: trace.probs.row(r).to_vec(),
                true_class: ds.images[i].label.clone(),
            });
        }
    }
    Ok(records)
}

/// Uniform-bin density histogram over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning [0, 1].
    pub edges: Vec<f64>,
    /// Densities per bin; sum(density * width) = 1.
    pub densities: Vec<f64>,
}

/// Density histogram of `probs[axis]` over [0, 1]; integral normalized
/// to 1. Values exactly at 1 land in the last bin.
pub fn pdf_histogram(records: &[ScoreRecord], axis: usize, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::config(format!("histogram needs >= 2 bins, got {bins}")));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("histogram over empty record list".into()));
    }
    let width = 1.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for rec in records {
        let v = axis_value(rec, axis)?;
        let b = ((v * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = records.len() as f64;
    let densities = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    Ok(Histogram { edges, densities })
}

/// 2D density over a pair of output axes (the probability simplex view);
/// integral normalized to 1. Requires at least 3 classes — for K = 2 the
/// two axes are linearly dependent and the view is meaningless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density2 {
    pub x_axis: usize,
    pub y_axis: usize,
    pub bins: usize,
    /// Row-major `bins x bins` densities; rows index the y bin.
    pub densities: Vec<Vec<f64>>,
}

pub fn simplex_pdf(records: &[ScoreRecord], axes: (usize, usize), bins: usize) -> Result<Density2> {
    if bins < 2 {
        return Err(Error::config(format!("2D histogram needs >= 2 bins, got {bins}")));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("2D histogram over empty record list".into()));
    }
    let k = records[0].probs.len();
    if k < 3 {
        return Err(Error::config(format!(
            "simplex density needs at least 3 classes, got {k}"
        )));
    }
    if axes.0 == axes.1 {
        return Err(Error::config("simplex density axes must differ"));
    }
    let mut counts = vec![vec![0usize; bins]; bins];
    for rec in records {
        let x = axis_value(rec, axes.0)?;
        let y = axis_value(rec, axes.1)?;
        let bx = ((x * bins as f64) as usize).min(bins - 1);
        let by = ((y * bins as f64) as usize).min(bins - 1);
        counts[by][bx] += 1;
    }
    let cell_area = 1.0 / (bins as f64 * bins as f64);
    let total = records.len() as f64;
    let densities = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / (total * cell_area)).collect())
        .collect();
    Ok(Density2 { x_axis: axes.0, y_axis: axes.1, bins, densities })
}

fn axis_value(rec: &ScoreRecord, axis: usize) -> Result<f64> {
    rec.probs.get(axis).copied().ok_or_else(|| {
        Error::dimension(format!("axis < {}", rec.probs.len()), format!("axis {axis}"))
    })
}

/// ROC curve and area under it, sweeping a threshold on `probs[axis]`.
///
/// Returns curve points (false-positive rate, true-positive rate) from
/// (0,0) to (1,1) and the trapezoid-rule AUC. Tied scores move as one
/// threshold step, which makes label swap complement the AUC exactly.
pub fn roc_auc(
    records: &[ScoreRecord],
    positive_class: &str,
    negative_class: &str,
    axis: usize,
) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for rec in records {
        if rec.true_class == positive_class {
            scored.push((axis_value(rec, axis)?, true));
            n_pos += 1;
        } else if rec.true_class == negative_class {
            scored.push((axis_value(rec, axis)?, false));
            n_neg += 1;
        }
    }
    if n_pos == 0 {
        return Err(Error::lookup(format!("no records of class '{positive_class}'")));
    }
    if n_neg == 0 {
        return Err(Error::lookup(format!("no records of class '{negative_class}'")));
    }

    // Descending score; classify positive when score >= threshold.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }

    let mut auc = 0.0;
    for pair in curve.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok((curve, auc))
}

/// The immediate anomaly score 1 - sum of the named normal-class
/// probabilities. For a softmax covering exactly the normal classes this
/// is identically 0 — it is retained as the study's diagnostic of why a
/// plain classifier cannot flag anomalies, not as a usable score.
pub const NAIVE_PROB_NOTE: &str =
    "diagnostic only: identically 0 when the softmax covers exactly the normal classes";

pub fn naive_anomaly_prob(record: &ScoreRecord, normal_axes: &[usize]) -> Result<f64> {
    if normal_axes.is_empty() {
        return Err(Error::config("naive anomaly probability: no normal axes set"));
    }
    let mut sum = 0.0;
    for &a in normal_axes {
        sum += axis_value(record, a)?;
    }
    Ok(1.0 - sum)
}

/// Fraction of each class's records whose `probs[axis]` falls inside the
/// window, bounds inclusive. Classes with no records are absent from the
/// map (their efficiency is undefined, not 0).
pub fn window_efficiency(
    records: &[ScoreRecord],
    window: &Window,
) -> Result<BTreeMap<String, f64>> {
    window.validate()?;
    let mut inside: BTreeMap<String, usize> = BTreeMap::new();
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        let v = axis_value(rec, window.axis)?;
        *totals.entry(rec.true_class.clone()).or_insert(0) += 1;
        if window.contains(v) {
            *inside.entry(rec.true_class.clone()).or_insert(0) += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(class, n)| {
            let k = inside.get(&class).copied().unwrap_or(0);
            (class, k as f64 / n as f64)
        })
        .collect())
}

/// Window figure of merit R = eps_anomaly / sqrt(sum sigma_b * eps_b),
/// in 1/sqrt(fb). Zero anomaly efficiency gives R = 0 regardless of the
/// background; zero background with nonzero anomaly efficiency is flagged.
pub fn compute_r(
    eff: &BTreeMap<String, f64>,
    xsec: &CrossSectionTable,
    anomaly_class: &str,
    background_classes: &[String],
) -> Result<RMetric> {
    let eps_an = *eff
        .get(anomaly_class)
        .ok_or_else(|| Error::lookup(format!("no efficiency for class '{anomaly_class}'")))?;
    if eps_an < 0.0 {
        return Err(Error::numeric(format!("negative anomaly efficiency {eps_an}")));
    }
    if background_classes.is_empty() {
        return Err(Error::config("R metric needs at least one background class"));
    }
    let mut denom = 0.0;
    for class in background_classes {
        let eps = *eff
            .get(class)
            .ok_or_else(|| Error::lookup(format!("no efficiency for class '{class}'")))?;
        if eps < 0.0 {
            return Err(Error::numeric(format!("negative efficiency for '{class}'")));
        }
        denom += xsec.get(class)? * eps;
    }
    if eps_an == 0.0 {
        return Ok(RMetric::Finite(0.0));
    }
    if denom == 0.0 {
        return Ok(RMetric::ZeroBackground);
    }
    Ok(RMetric::Finite(eps_an / denom.sqrt()))
}

/// Slides closed windows of width `delta` at the given step over [0, 1]
/// on `axis` and evaluates R in each. Centers run from delta/2 to
/// 1 - delta/2. Errors if every window has zero background (no valid
/// window to select R_max from).
#[allow(clippy::too_many_arguments)]
pub fn scan_windows(
    records: &[ScoreRecord],
    delta: f64,
    step: f64,
    xsec: &CrossSectionTable,
    anomaly_class: &str,
    background_classes: &[String],
    axis: usize,
) -> Result<ScanResult> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config(format!("window width {delta} outside (0, 1]")));
    }
    if !(step > 0.0 && step <= delta) {
        return Err(Error::config(format!(
            "scan step {step} must satisfy 0 < step <= delta ({delta})"
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("window scan over empty record list".into()));
    }

    let mut windows = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut zero_background = 0usize;
    let half = delta / 2.0;
    let mut i = 0usize;
    loop {
        let center = half + i as f64 * step;
        if center > 1.0 - half + 1e-12 {
            break;
        }
        let window = Window {
            p_min: (center - half).max(0.0),
            p_max: (center + half).min(1.0),
            axis,
        };
        let eff = window_efficiency(records, &window)?;
        let eff_errors = eff
            .iter()
            .map(|(class, &e)| {
                let n = records.iter().filter(|r| &r.true_class == class).count() as f64;
                (class.clone(), (e * (1.0 - e) / n).sqrt())
            })
            .collect();
        let r = compute_r(&eff, xsec, anomaly_class, background_classes)?;
        match r {
            RMetric::Finite(v) => {
                if best.map_or(true, |(bv, _)| v > bv) {
                    best = Some((v, windows.len()));
                }
            }
            RMetric::ZeroBackground => zero_background += 1,
        }
        windows.push(WindowStats { window, center, efficiencies: eff, eff_errors, r });
        i += 1;
    }

    let (r_max, best_idx) = best.ok_or_else(|| {
        Error::config("window scan found no window with nonzero background")
    })?;
    Ok(ScanResult {
        delta,
        step,
        axis,
        anomaly_class: anomaly_class.to_string(),
        background_classes: background_classes.to_vec(),
        best_window: windows[best_idx].window,
        windows,
        r_max,
        zero_background_windows: zero_background,
    })
}

/// Discovery benchmark used throughout: N_anomaly / sqrt(N_SM) = 5.
pub const SIGNIFICANCE_BENCHMARK: f64 = 5.0;

/// N_anomaly / sqrt(N_SM). Zero expected background is undefined.
pub fn significance(n_anomaly: f64, n_sm: f64) -> Result<f64> {
    if n_anomaly < 0.0 || !n_anomaly.is_finite() {
        return Err(Error::numeric(format!("anomaly count {n_anomaly} invalid")));
    }
    if !(n_sm > 0.0) || !n_sm.is_finite() {
        return Err(Error::numeric(format!(
            "significance undefined for SM count {n_sm}"
        )));
    }
    Ok(n_anomaly / n_sm.sqrt())
}

/// Minimum detectable anomaly cross-section (fb): the sigma for which the
/// expected significance R_max * sigma * sqrt(L) reaches `threshold`.
pub fn sigma_min(r_max: f64, luminosity: f64, threshold: f64) -> Result<f64> {
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::numeric(format!("sigma_min needs R_max > 0, got {r_max}")));
    }
    if !(luminosity > 0.0) || !luminosity.is_finite() {
        return Err(Error::numeric(format!(
            "sigma_min needs luminosity > 0, got {luminosity}"
        )));
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::numeric(format!(
            "sigma_min needs threshold > 0, got {threshold}"
        )));
    }
    Ok(threshold / (r_max * luminosity.sqrt()))
}

/// Mean distance from the nearest one-hot vertex, 1 - max_k p_k, over the
/// records of one class. Large values mean the class concentrates away
/// from every normal-class corner — the anomaly signature this method
/// trains for.
pub fn centering_metric(records: &[ScoreRecord], class: &str) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for rec in records.iter().filter(|r| r.true_class == class) {
        let max = rec.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        sum += 1.0 - max;
        n += 1;
    }
    if n == 0 {
        return Err(Error::lookup(format!("no records of class '{class}'")));
    }
    Ok(sum / n as f64)
}
