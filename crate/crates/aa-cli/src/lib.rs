//! Experiment pipeline around the `aa-core` library.
//!
//! One experiment lives in one directory with a fixed layout:
//!
//! ```text
//! <output_dir>/
//!   config.json        resolved configuration echo (written by `gen`)
//!   .lock              advisory lock, held while a command runs
//!   datasets/          one binary container + JSON sidecar + PGM per class
//!   checkpoints/       trained network parameters
//!   scores/            per-event classifier outputs as CSV + metadata
//!   reports/           loss curves, run reports, scan curves, final report
//! ```
//!
//! Every artifact carries the configuration echo and the SHA-256 digests
//! of its direct inputs, so the full provenance chain from report back to
//! config is checkable offline. All randomness derives from the single
//! `seed` field via tagged seed derivation; rerunning any command with
//! the same config reproduces its outputs byte for byte.

pub mod commands;
pub mod config;
pub mod layout;
pub mod lock;
pub mod provenance;

use aa_core::Error;

/// Process exit code for an error: caller mistakes (bad config, shape
/// mismatches) exit 2, bad or missing input data exits 3, numeric
/// failures exit 4. Success is 0.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension { .. } => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}
