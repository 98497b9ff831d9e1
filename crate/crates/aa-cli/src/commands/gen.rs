//! `aa gen`: generate one dataset per configured class, each with a
//! binary container, JSON sidecar, and average-image PGM preview.
//!
//! Each class draws from its own seed, derived from the global seed by
//! the tag `gen/<class>`, so classes are independent and any subset can
//! be regenerated bit-identically.

use aa_core::eventgen::{average_image, write_dataset, write_pgm, Generator};
use aa_core::util::{derive_seed, file_sha256};
use aa_core::Result;

use crate::config::ExperimentConfig;
use crate::lock::DirLock;
use crate::provenance::{make_provenance, write_config_echo};

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let layout = super::prepared_layout(config)?;
    let _lock = DirLock::acquire(&layout)?;
    write_config_echo(&layout, config)?;

    let g = &config.generator;
    let generator = Generator {
        grid_h: g.grid_h,
        grid_w: g.grid_w,
        energy_min: g.energy_min,
        energy_max: g.energy_max,
    };
    let provenance = make_provenance(config, &[])?;

    for class in g.all_classes() {
        let spec = g.resolve_spec(&class)?;
        let seed = derive_seed(config.seed, &format!("gen/{class}"));
        let ds = generator.generate_dataset(&[spec], g.per_class_count, g.split_fraction, seed)?;

        let bin = layout.dataset_bin(&class);
        let sidecar = layout.dataset_sidecar(&class);
        write_dataset(&ds, &bin, &sidecar, Some(provenance.clone()))?;

        let avg = average_image(&ds, &class)?;
        let pgm = layout.dataset_pgm(&class);
        write_pgm(&pgm, avg.view())?;

        println!(
            "wrote {} ({} events, sha256={})",
            layout.relative(&bin),
            ds.len(),
            file_sha256(&bin)?
        );
    }
    println!("wrote {}", layout.relative(&layout.config()));
    Ok(())
}
