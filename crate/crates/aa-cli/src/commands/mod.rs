//! The five pipeline commands. Each acquires the experiment lock, checks
//! the configuration echo, does its work, and prints one line per
//! artifact written.

pub mod eval;
pub mod gen;
pub mod report;
pub mod scan;
pub mod train;

use aa_core::eventgen::{self, Dataset};
use aa_core::util::file_sha256;
use aa_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::layout::Layout;

/// Reads one class dataset written by `gen`, with a pointed error when
/// it is absent.
pub(crate) fn load_class_dataset(layout: &Layout, class: &str) -> Result<Dataset> {
    let bin = layout.dataset_bin(class);
    if !bin.exists() {
        return Err(Error::lookup(format!(
            "dataset for class '{class}' not found at {} — run `aa gen` first",
            bin.display()
        )));
    }
    let ds = eventgen::read_dataset(&bin, &layout.dataset_sidecar(class))?;
    if ds.classes != [class.to_string()] {
        return Err(Error::Format(format!(
            "dataset file {} holds classes {:?}, expected ['{class}']",
            bin.display(),
            ds.classes
        )));
    }
    Ok(ds)
}

/// Loads and merges the listed classes in order; the merge order fixes
/// label indices, so callers must pass the configured class order.
pub(crate) fn load_merged(layout: &Layout, classes: &[String]) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::config("no classes to load"));
    }
    let parts: Vec<Dataset> = classes
        .iter()
        .map(|c| load_class_dataset(layout, c))
        .collect::<Result<_>>()?;
    let refs: Vec<&Dataset> = parts.iter().collect();
    eventgen::merge_datasets(&refs)
}

/// `dataset/<class>` digest entries for the listed classes' containers.
pub(crate) fn dataset_digests(
    layout: &Layout,
    classes: &[String],
) -> Result<Vec<(String, String)>> {
    classes
        .iter()
        .map(|class| {
            let digest = file_sha256(&layout.dataset_bin(class))?;
            Ok((format!("dataset/{class}"), digest))
        })
        .collect()
}

/// Shared per-command preamble: layout with directories in place.
pub(crate) fn prepared_layout(config: &ExperimentConfig) -> Result<Layout> {
    let layout = Layout::new(&config.output_dir);
    layout.ensure_dirs()?;
    Ok(layout)
}
