//! Parametric toy jet-image generator.
//!
//! Stands in for a full Monte Carlo + clustering pipeline: each event class
//! is a small set of Gaussian energy prongs on a fixed calorimeter grid,
//! with Dirichlet-shared energies and additive cell noise. The point is not
//! physics fidelity but controllable, seedable class structure: one-prong
//! wide deposits for QCD-like jets, multi-prong patterns for boosted objects
//! and the anomaly stand-ins.
//!
//! Every image draws from its own RNG substream derived from
//! `(seed, class index, image index)`, so generation order (or a parallel
//! schedule) cannot change the dataset.

mod format;

pub use format::{
    dataset_bytes, read_dataset, write_dataset, write_grid_csv, write_pgm, DatasetSidecar,
    GridDims, Provenance,
};

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Generation parameters for one event class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    /// Class identifier, unique within a generator configuration.
    pub name: String,
    /// Number of energy sub-clusters (prongs), >= 1.
    pub prong_count: usize,
    /// Gaussian width of each prong, in grid units, > 0.
    pub prong_spread: f64,
    /// Dirichlet concentration parameters for energy sharing among prongs;
    /// one entry per prong, all > 0.
    pub energy_profile: Vec<f64>,
    /// Radial scale for prong placement around the grid centre, grid units, >= 0.
    pub displacement_scale: f64,
    /// Per-cell additive Gaussian noise amplitude in GeV, >= 0.
    pub noise_level: f64,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        let nm = &self.name;
        if nm.is_empty() {
            return Err(Error::config("class spec: name must be non-empty"));
        }
        if self.prong_count < 1 {
            return Err(Error::config(format!("class '{nm}': prong_count must be >= 1")));
        }
        if !(self.prong_spread > 0.0) || !self.prong_spread.is_finite() {
            return Err(Error::config(format!("class '{nm}': prong_spread must be > 0")));
        }
        if self.energy_profile.len() != self.prong_count {
            return Err(Error::config(format!(
                "class '{nm}': energy_profile has {} entries, expected prong_count = {}",
                self.energy_profile.len(),
                self.prong_count
            )));
        }
        if self.energy_profile.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::config(format!(
                "class '{nm}': energy_profile entries must all be > 0"
            )));
        }
        if self.displacement_scale < 0.0 || !self.displacement_scale.is_finite() {
            return Err(Error::config(format!(
                "class '{nm}': displacement_scale must be >= 0"
            )));
        }
        if self.noise_level < 0.0 || !self.noise_level.is_finite() {
            return Err(Error::config(format!("class '{nm}': noise_level must be >= 0")));
        }
        Ok(())
    }
}

/// A single jet image: an `H x W` grid of non-negative energy deposits.
#[derive(Debug, Clone, PartialEq)]
pub struct JetImage {
    pub height: usize,
    pub width: usize,
    /// Row-major energies in GeV.
    pub pixels: Vec<f32>,
    /// Class identifier of the generating spec.
    pub label: String,
    /// Cached sum of `pixels`, accumulated in f64.
    pub total_energy: f64,
}

impl JetImage {
    pub fn pixel(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Sum of all pixels, accumulated in f64 in row-major order.
    pub fn pixel_sum(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }

    /// Pixels rescaled to unit total energy, as fed to the classifier.
    /// Raw energies stay on disk; only the network input is normalized.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        if !(self.total_energy > 0.0) {
            return Err(Error::numeric(format!(
                "cannot normalize image with total energy {}",
                self.total_energy
            )));
        }
        Ok(self
            .pixels
            .iter()
            .map(|&p| p as f64 / self.total_energy)
            .collect())
    }

    /// Row/col of the brightest pixel (first occurrence on ties).
    pub fn argmax_pixel(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, &p) in self.pixels.iter().enumerate() {
            if p > self.pixels[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Named train/test index subsets over a dataset's image list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn named(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::lookup(format!("no split named '{other}'"))),
        }
    }
}

/// An ordered collection of jet images with train/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Declared class set, in generation order; image labels index into this.
    pub classes: Vec<String>,
    pub images: Vec<JetImage>,
    pub split: SplitIndices,
    /// RNG seed the dataset was generated from.
    pub seed: u64,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Configured total-energy range [E_min, E_max] in GeV.
    pub energy_range: (f64, f64),
    /// Echo of the generating specs, kept for the sidecar.
    pub specs: Vec<ClassSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::lookup(format!("class '{name}' not in dataset")))
    }

    /// Indices of all images with the given label.
    pub fn indices_of_class(&self, name: &str) -> Result<Vec<usize>> {
        self.class_index(name)?;
        Ok(self
            .images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.label == name)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn per_class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for im in &self.images {
            *counts.entry(im.label.clone()).or_insert(0usize) += 1;
        }
        counts
    }

    /// SHA-256 of the binary container serialization.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(&dataset_bytes(self))
    }

    /// Checks the structural invariants: split coverage/disjointness, label
    /// membership, pixel positivity, energy-range bounds and the cached-sum
    /// identity.
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        let mut seen = vec![false; n];
        for &i in self.split.train.iter().chain(self.split.test.iter()) {
            if i >= n {
                return Err(Error::Format(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::Format(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("splits do not cover all images".into()));
        }
        let (e_min, e_max) = self.energy_range;
        for (i, im) in self.images.iter().enumerate() {
            if !self.classes.iter().any(|c| c == &im.label) {
                return Err(Error::Format(format!(
                    "image {i} has undeclared label '{}'",
                    im.label
                )));
            }
            if im.pixels.len() != self.grid_h * self.grid_w {
                return Err(Error::Format(format!("image {i} has wrong pixel count")));
            }
            if im.pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Format(format!(
                    "image {i} has a negative or non-finite pixel"
                )));
            }
            let sum = im.pixel_sum();
            if (sum - im.total_energy).abs() > 1e-9 * im.total_energy.max(1.0) {
                return Err(Error::Format(format!(
                    "image {i}: cached total {} != pixel sum {sum}",
                    im.total_energy
                )));
            }
            // f32 quantization of pixels leaves ~1e-7 relative slack on the range.
            let slack = 1e-6 * e_max.max(1.0);
            if sum < e_min - slack || sum > e_max + slack {
                return Err(Error::Format(format!(
                    "image {i}: total energy {sum} outside [{e_min}, {e_max}]"
                )));
            }
        }
        Ok(())
    }
}

/// Grid geometry and energy budget shared by all classes of one generator.
///
/// The grid is `grid_h x grid_w` pixels spanning a [-1, 1]^2 angular window;
/// one grid unit is one pixel (0.0625 angular units at the 32x32 default).
/// Selection cuts are not simulated; the total-energy range stands in for
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub grid_h: usize,
    pub grid_w: usize,
    pub energy_min: f64,
    pub energy_max: f64,
}

impl Default for Generator {
    fn default() -> Self {
        Generator {
            grid_h: 32,
            grid_w: 32,
            energy_min: 500.0,
            energy_max: 1000.0,
        }
    }
}

/// Prong centres and sampled target energy of one generated image,
/// exposed for tests that need the latent draw.
#[derive(Debug, Clone)]
pub struct ImageDetail {
    pub image: JetImage,
    /// Continuous (row, col) centre of each prong.
    pub prong_centers: Vec<(f64, f64)>,
    /// Energy share of each prong (sums to 1).
    pub prong_shares: Vec<f64>,
    pub target_energy: f64,
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        if self.grid_h < 2 || self.grid_w < 2 {
            return Err(Error::config("generator: grid must be at least 2x2"));
        }
        if !(self.energy_min > 0.0) || !(self.energy_max >= self.energy_min) {
            return Err(Error::config(
                "generator: need 0 < energy_min <= energy_max",
            ));
        }
        Ok(())
    }

    /// Draws one image from `spec` using `rng`.
    ///
    /// Prong placement: a single prong lands uniformly in the disk of radius
    /// `displacement_scale` around the grid centre; `n >= 2` prongs sit at
    /// evenly spaced angles (random global orientation, small per-prong
    /// jitter) at radii in `[0.5, 1] * displacement_scale`, which keeps
    /// prongs from collapsing onto each other. Energies are a Dirichlet
    /// draw over `energy_profile` times a target energy sampled from the
    /// generator range; Gaussian cell noise is added, clipped at zero, and
    /// the image is rescaled so its total equals the target exactly.
    pub fn generate_image(&self, spec: &ClassSpec, rng: &mut ChaCha12Rng) -> Result<JetImage> {
        Ok(self.generate_image_detailed(spec, rng)?.image)
    }

    pub fn generate_image_detailed(
        &self,
        spec: &ClassSpec,
        rng: &mut ChaCha12Rng,
    ) -> Result<ImageDetail> {
        self.validate()?;
        spec.validate()?;
        let (h, w) = (self.grid_h, self.grid_w);
        let target_energy = rng.gen_range(self.energy_min..=self.energy_max);

        let n = spec.prong_count;
        let shares: Vec<f64> = if n == 1 {
            vec![1.0]
        } else {
            // Dirichlet via normalized Gamma draws.
            let draws: Vec<f64> = spec
                .energy_profile
                .iter()
                .map(|&alpha| {
                    let g = Gamma::new(alpha, 1.0)
                        .map_err(|e| Error::config(format!("energy_profile: {e}")))?;
                    Ok(g.sample(rng))
                })
                .collect::<Result<_>>()?;
            let total: f64 = draws.iter().sum();
            draws.iter().map(|d| d / total).collect()
        };

        let center = (h as f64 / 2.0, w as f64 / 2.0);
        let mut prong_centers = Vec::with_capacity(n);
        if n == 1 {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let u: f64 = rng.gen();
            let r = spec.displacement_scale * u.sqrt();
            prong_centers.push((center.0 + r * theta.sin(), center.1 + r * theta.cos()));
        } else {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let sector = std::f64::consts::TAU / n as f64;
            let max_jitter = sector / 8.0;
            for j in 0..n {
                let u: f64 = rng.gen();
                let r = spec.displacement_scale * (0.5 + 0.5 * u);
                let jitter = rng.gen_range(-max_jitter..max_jitter);
                let theta = phase + sector * j as f64 + jitter;
                prong_centers.push((center.0 + r * theta.sin(), center.1 + r * theta.cos()));
            }
        }

        let mut grid = vec![0.0f64; h * w];
        for (p, &(cy, cx)) in prong_centers.iter().enumerate() {
            deposit_blob(
                &mut grid,
                h,
                w,
                cy,
                cx,
                spec.prong_spread,
                target_energy * shares[p],
            );
        }

        if spec.noise_level > 0.0 {
            for cell in grid.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *cell = (*cell + spec.noise_level * z).max(0.0);
            }
        }

        let sum: f64 = grid.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::numeric(format!(
                "class '{}': image degenerated to zero total energy",
                spec.name
            )));
        }
        let scale = target_energy / sum;
        let pixels: Vec<f32> = grid.iter().map(|&v| (v * scale) as f32).collect();
        let total_energy: f64 = pixels.iter().map(|&p| p as f64).sum();

        Ok(ImageDetail {
            image: JetImage {
                height: h,
                width: w,
                pixels,
                label: spec.name.clone(),
                total_energy,
            },
            prong_centers,
            prong_shares: shares,
            target_energy,
        })
    }

    /// Generates a balanced dataset: `per_class_count` images per class,
    /// stratified train/test split at `split_fraction`.
    ///
    /// Image `i` of class `c` draws from ChaCha12 stream `(c << 32) | i` of
    /// `seed`, so the dataset is independent of generation schedule.
    /// Within each class block, the first `round(count * fraction)` images
    /// go to the train split and the remainder to test.
    pub fn generate_dataset(
        &self,
        specs: &[ClassSpec],
        per_class_count: usize,
        split_fraction: f64,
        seed: u64,
    ) -> Result<Dataset> {
        self.validate()?;
        if specs.is_empty() {
            return Err(Error::config("generate_dataset: empty spec list"));
        }
        if per_class_count < 1 {
            return Err(Error::config("generate_dataset: per_class_count must be >= 1"));
        }
        if !(0.0..=1.0).contains(&split_fraction) {
            return Err(Error::config(
                "generate_dataset: split_fraction must be in [0, 1]",
            ));
        }
        for spec in specs {
            spec.validate()?;
        }
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != specs.len() {
            return Err(Error::config("generate_dataset: class names must be unique"));
        }
        if specs.len() > u16::MAX as usize || per_class_count >= u32::MAX as usize {
            return Err(Error::config("generate_dataset: class or image count too large"));
        }

        let mut images = Vec::with_capacity(specs.len() * per_class_count);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (ci, spec) in specs.iter().enumerate() {
            let base = ci * per_class_count;
            let train_n = ((per_class_count as f64) * split_fraction).round() as usize;
            let train_n = train_n.min(per_class_count);
            for ii in 0..per_class_count {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(((ci as u64) << 32) | ii as u64);
                images.push(self.generate_image(spec, &mut rng)?);
                if ii < train_n {
                    train.push(base + ii);
                } else {
                    test.push(base + ii);
                }
            }
        }

        Ok(Dataset {
            classes: specs.iter().map(|s| s.name.clone()).collect(),
            images,
            split: SplitIndices { train, test },
            seed,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            energy_range: (self.energy_min, self.energy_max),
            specs: specs.to_vec(),
        })
    }
}

/// Adds a Gaussian blob of total energy `energy` centred at `(cy, cx)`.
/// The kernel is evaluated at pixel centres inside a 4-sigma box and
/// normalized over that support, so each blob contributes exactly `energy`.
fn deposit_blob(grid: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, sigma: f64, energy: f64) {
    let reach = 4.0 * sigma;
    let row_lo = ((cy - reach).floor().max(0.0)) as usize;
    let row_hi = ((cy + reach).ceil().min(h as f64)) as usize;
    let col_lo = ((cx - reach).floor().max(0.0)) as usize;
    let col_hi = ((cx + reach).ceil().min(w as f64)) as usize;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    let mut weights = Vec::with_capacity((row_hi - row_lo) * (col_hi - col_lo));
    let mut total = 0.0;
    for row in row_lo..row_hi {
        let dy = (row as f64 + 0.5) - cy;
        for col in col_lo..col_hi {
            let dx = (col as f64 + 0.5) - cx;
            let val = (-(dy * dy + dx * dx) * inv_two_sigma2).exp();
            weights.push(val);
            total += val;
        }
    }
    if total <= 0.0 {
        // Blob support off-grid; nearest pixel takes the whole deposit.
        let row = (cy.floor().max(0.0) as usize).min(h - 1);
        let col = (cx.floor().max(0.0) as usize).min(w - 1);
        grid[row * w + col] += energy;
        return;
    }
    let scale = energy / total;
    let mut k = 0;
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            grid[row * w + col] += weights[k] * scale;
            k += 1;
        }
    }
}

/// Per-pixel arithmetic mean over all images of `class`.
pub fn average_image(ds: &Dataset, class: &str) -> Result<Array2<f64>> {
    let idx = ds.indices_of_class(class)?;
    if idx.is_empty() {
        return Err(Error::lookup(format!("class '{class}' has no images")));
    }
    let mut acc = Array2::<f64>::zeros((ds.grid_h, ds.grid_w));
    for &i in &idx {
        let im = &ds.images[i];
        for r in 0..ds.grid_h {
            for c in 0..ds.grid_w {
                acc[[r, c]] += im.pixel(r, c) as f64;
            }
        }
    }
    acc.mapv_inplace(|v| v / idx.len() as f64);
    Ok(acc)
}

/// Concatenates datasets with pairwise disjoint class sets into one.
///
/// Grids and energy ranges must agree. Image order is part order; split
/// indices are offset accordingly. The merged seed is taken from the first
/// part — a merged set has no single generating stream, so its seed is
/// informational only.
pub fn merge_datasets(parts: &[&Dataset]) -> Result<Dataset> {
    let first = *parts
        .first()
        .ok_or_else(|| Error::EmptyInput("merge of zero datasets".into()))?;
    let mut classes: Vec<String> = Vec::new();
    let mut images = Vec::new();
    let mut split = SplitIndices { train: Vec::new(), test: Vec::new() };
    let mut specs = Vec::new();
    for part in parts {
        if (part.grid_h, part.grid_w) != (first.grid_h, first.grid_w) {
            return Err(Error::config(format!(
                "cannot merge datasets with grids {}x{} and {}x{}",
                first.grid_h, first.grid_w, part.grid_h, part.grid_w
            )));
        }
        if part.energy_range != first.energy_range {
            return Err(Error::config(
                "cannot merge datasets with different energy ranges",
            ));
        }
        for class in &part.classes {
            if classes.contains(class) {
                return Err(Error::config(format!(
                    "class '{class}' appears in more than one merged dataset"
                )));
            }
            classes.push(class.clone());
        }
        let base = images.len();
        split.train.extend(part.split.train.iter().map(|i| i + base));
        split.test.extend(part.split.test.iter().map(|i| i + base));
        images.extend(part.images.iter().cloned());
        specs.extend(part.specs.iter().cloned());
    }
    let merged = Dataset {
        classes,
        images,
        split,
        seed: first.seed,
        grid_h: first.grid_h,
        grid_w: first.grid_w,
        energy_range: first.energy_range,
        specs,
    };
    merged.validate()?;
    Ok(merged)
}

/// Restriction of a dataset to the named classes, in the order given.
///
/// Image order is preserved; split membership is preserved with indices
/// remapped to the retained images. Every requested class must exist.
pub fn subset_by_class(ds: &Dataset, classes: &[String]) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("subset with no classes".into()));
    }
    let mut unique = std::collections::BTreeSet::new();
    for class in classes {
        ds.class_index(class)?;
        if !unique.insert(class) {
            return Err(Error::config(format!(
                "class '{class}' requested twice in subset"
            )));
        }
    }
    let keep: Vec<bool> = ds
        .images
        .iter()
        .map(|im| classes.contains(&im.label))
        .collect();
    let mut remap = vec![usize::MAX; ds.images.len()];
    let mut images = Vec::new();
    for (i, im) in ds.images.iter().enumerate() {
        if keep[i] {
            remap[i] = images.len();
            images.push(im.clone());
        }
    }
    let filter = |idx: &[usize]| -> Vec<usize> {
        idx.iter().filter(|&&i| keep[i]).map(|&i| remap[i]).collect()
    };
    let subset = Dataset {
        classes: classes.to_vec(),
        images,
        split: SplitIndices {
            train: filter(&ds.split.train),
            test: filter(&ds.split.test),
        },
        seed: ds.seed,
        grid_h: ds.grid_h,
        grid_w: ds.grid_w,
        energy_range: ds.energy_range,
        specs: ds
            .specs
            .iter()
            .filter(|s| classes.contains(&s.name))
            .cloned()
            .collect(),
    };
    subset.validate()?;
    Ok(subset)
}

/// Default specs mirroring the phenomenology of the study: one wide prong
/// for QCD, two for W, three for top, and tighter 2/3/4-prong resonances
/// plus an asymmetric displaced two-prong class as anomaly stand-ins.
pub fn default_specs() -> BTreeMap<String, ClassSpec> {
    let mk = |name: &str, prongs: usize, spread: f64, profile: &[f64], disp: f64| ClassSpec {
        name: name.to_string(),
        prong_count: prongs,
        prong_spread: spread,
        energy_profile: profile.to_vec(),
        displacement_scale: disp,
        noise_level: 0.1,
    };
    let mut m = BTreeMap::new();
    m.insert("qcd".into(), mk("qcd", 1, 4.0, &[1.0], 1.5));
    m.insert("top".into(), mk("top", 3, 1.5, &[4.0, 2.0, 1.0], 5.0));
    m.insert("wjet".into(), mk("wjet", 2, 1.5, &[3.0, 2.0], 4.0));
    m.insert("r2".into(), mk("r2", 2, 1.0, &[2.0, 2.0], 5.5));
    m.insert("r3".into(), mk("r3", 3, 1.0, &[2.0, 2.0, 2.0], 4.5));
    m.insert("r4".into(), mk("r4", 4, 1.2, &[3.0, 2.0, 2.0, 1.0], 5.0));
    m.insert("eft".into(), mk("eft", 2, 2.0, &[5.0, 1.0], 6.5));
    m
}
