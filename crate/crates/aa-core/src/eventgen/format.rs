//! On-disk formats for datasets and grid exports.
//!
//! Datasets are stored as a little-endian binary container plus a JSON
//! sidecar. The container holds only the heavy payload (labels and f32
//! pixels); everything needed to regenerate or audit the dataset (specs,
//! seed, counts, split indices, provenance) lives in the sidecar.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "AAJD"
//! version    u16      currently 1
//! height     u16
//! width      u16
//! n_classes  u16      followed by n_classes * (u16 len + UTF-8 name)
//! n_images   u32
//! images     n_images * (u16 label id + h*w f32 pixels, row-major)
//! ```

use super::{ClassSpec, Dataset, JetImage, SplitIndices};
use crate::error::{Error, Result};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

const MAGIC: &[u8; 4] = b"AAJD";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

/// Where an artifact came from: the configuration echo and the digests of
/// the inputs it was derived from. Filled in by the pipeline layer; plain
/// library writes leave it empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Serialized configuration the producing run used, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// SHA-256 digests of input artifacts, keyed by role ("dataset", ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

/// JSON sidecar describing a dataset container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format_version: u16,
    pub seed: u64,
    pub grid: GridDims,
    /// [E_min, E_max] in GeV.
    pub energy_range: (f64, f64),
    /// Generating specs in class order (class id = position).
    pub specs: Vec<ClassSpec>,
    pub per_class_counts: BTreeMap<String, usize>,
    pub split: SplitIndices,
    /// SHA-256 of the binary container this sidecar describes.
    pub container_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetSidecar {
    pub fn from_dataset(ds: &Dataset) -> DatasetSidecar {
        DatasetSidecar {
            format_version: VERSION,
            seed: ds.seed,
            grid: GridDims {
                height: ds.grid_h,
                width: ds.grid_w,
            },
            energy_range: ds.energy_range,
            specs: ds.specs.clone(),
            per_class_counts: ds.per_class_counts(),
            split: ds.split.clone(),
            container_sha256: ds.digest(),
            provenance: None,
        }
    }
}

/// Serializes the dataset to container bytes. Deterministic: depends only
/// on the dataset contents.
pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + ds.images.len() * (2 + 4 * ds.grid_h * ds.grid_w));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.grid_h as u16).to_le_bytes());
    buf.extend_from_slice(&(ds.grid_w as u16).to_le_bytes());
    buf.extend_from_slice(&(ds.classes.len() as u16).to_le_bytes());
    for name in &ds.classes {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    buf.extend_from_slice(&(ds.images.len() as u32).to_le_bytes());
    for im in &ds.images {
        let label_id = ds
            .classes
            .iter()
            .position(|c| c == &im.label)
            .expect("validated label") as u16;
        buf.extend_from_slice(&label_id.to_le_bytes());
        for &p in &im.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    buf
}

/// Writes the container to `bin_path` and the sidecar to `sidecar_path`.
pub fn write_dataset(
    ds: &Dataset,
    bin_path: &Path,
    sidecar_path: &Path,
    provenance: Option<Provenance>,
) -> Result<()> {
    let bytes = dataset_bytes(ds);
    std::fs::write(bin_path, &bytes)?;
    let mut sidecar = DatasetSidecar::from_dataset(ds);
    sidecar.provenance = provenance;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
    std::fs::write(sidecar_path, json)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "container truncated reading {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads a dataset back from its container and sidecar. Verifies the magic,
/// version, digest and structural invariants.
pub fn read_dataset(bin_path: &Path, sidecar_path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(bin_path)?;
    let sidecar_text = std::fs::read_to_string(sidecar_path)?;
    let sidecar: DatasetSidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| Error::Format(format!("sidecar parse: {e}")))?;

    let mut cur = Cursor { buf: &bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a dataset container (bad magic)".into()));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let h = cur.u16("height")? as usize;
    let w = cur.u16("width")? as usize;
    let n_classes = cur.u16("class count")? as usize;
    let mut classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = cur.u16("class name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "class name")?)
            .map_err(|e| Error::Format(format!("class name not UTF-8: {e}")))?;
        classes.push(name.to_string());
    }
    let n_images = cur.u32("image count")? as usize;
    let mut images = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let label_id = cur.u16("label")? as usize;
        let label = classes
            .get(label_id)
            .ok_or_else(|| Error::Format(format!("image {i}: label id {label_id} out of range")))?
            .clone();
        let raw = cur.take(4 * h * w, "pixels")?;
        let pixels: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let total_energy: f64 = pixels.iter().map(|&p| p as f64).sum();
        images.push(JetImage {
            height: h,
            width: w,
            pixels,
            label,
            total_energy,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "container has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    if sidecar.grid.height != h || sidecar.grid.width != w {
        return Err(Error::Format(
            "sidecar grid dimensions disagree with container".into(),
        ));
    }

    let ds = Dataset {
        classes,
        images,
        split: sidecar.split.clone(),
        seed: sidecar.seed,
        grid_h: h,
        grid_w: w,
        energy_range: sidecar.energy_range,
        specs: sidecar.specs.clone(),
    };
    if sidecar.container_sha256 != ds.digest() {
        return Err(Error::Format(
            "container digest does not match sidecar".into(),
        ));
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes a grid as a binary (P5) PGM, 16-bit big-endian samples, values
/// scaled so the grid maximum maps to 65535. Zero-max grids write all-zero.
pub fn write_pgm(path: &Path, grid: ArrayView2<'_, f64>) -> Result<()> {
    let (h, w) = grid.dim();
    let max = grid.iter().cloned().fold(0.0f64, f64::max);
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::numeric("PGM export requires finite non-negative values"));
    }
    let mut out = Vec::with_capacity(20 + 2 * h * w);
    write!(out, "P5\n{w} {h}\n65535\n").expect("in-memory write");
    for row in grid.rows() {
        for &v in row {
            let q = if max > 0.0 {
                (v / max * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a grid as CSV: one row per grid row, full `f64` round-trip
/// formatting. Optional provenance lines are emitted as leading `#`
/// comments.
pub fn write_grid_csv(path: &Path, grid: ArrayView2<'_, f64>, comments: &[String]) -> Result<()> {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for row in grid.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
