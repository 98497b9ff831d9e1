//! Configuration echo and digest plumbing. Every artifact records the
//! configuration it was produced under plus the digests of its direct
//! inputs, forming an acyclic chain from final report back to config.

use std::collections::BTreeMap;
use std::path::Path;

use aa_core::eventgen::Provenance;
use aa_core::util::sha256_hex;
use aa_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::layout::Layout;

/// Configuration as a JSON value for embedding into artifacts.
pub fn config_value(config: &ExperimentConfig) -> Result<serde_json::Value> {
    serde_json::to_value(config).map_err(|e| Error::Format(format!("config serialization: {e}")))
}

/// SHA-256 of the compact JSON form of the configuration.
pub fn config_sha256(config: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string(config)
        .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Provenance block: full config echo plus named input digests.
pub fn make_provenance(
    config: &ExperimentConfig,
    inputs: &[(String, String)],
) -> Result<Provenance> {
    let mut map = BTreeMap::new();
    map.insert("config".to_string(), config_sha256(config)?);
    for (role, digest) in inputs {
        map.insert(role.clone(), digest.clone());
    }
    Ok(Provenance {
        config: Some(config_value(config)?),
        inputs: map,
    })
}

/// `key=digest` comment lines for CSV artifacts, mirroring the JSON
/// provenance block.
pub fn comment_lines(prov: &Provenance) -> Vec<String> {
    prov.inputs
        .iter()
        .map(|(role, digest)| format!("{role}_sha256={digest}"))
        .collect()
}

/// Writes the resolved configuration echo into the experiment directory,
/// refusing to overwrite an echo with a different data identity.
pub fn write_config_echo(layout: &Layout, config: &ExperimentConfig) -> Result<()> {
    let path = layout.config();
    if path.exists() {
        check_identity(&path, config)?;
    }
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
    std::fs::write(&path, text + "\n")?;
    Ok(())
}

/// Requires an existing echo with the same data identity (seed +
/// generator section) as the resolved configuration.
pub fn verify_config_echo(layout: &Layout, config: &ExperimentConfig) -> Result<()> {
    let path = layout.config();
    if !path.exists() {
        return Err(Error::config(format!(
            "no configuration echo at {} — run `aa gen` first",
            path.display()
        )));
    }
    check_identity(&path, config)
}

fn check_identity(echo_path: &Path, config: &ExperimentConfig) -> Result<()> {
    let text = std::fs::read_to_string(echo_path)?;
    let echoed: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
        Error::config(format!(
            "existing configuration echo {} is unreadable: {e}",
            echo_path.display()
        ))
    })?;
    if echoed.identity_digest()? != config.identity_digest()? {
        return Err(Error::config(format!(
            "experiment directory {} was produced under a different seed or generator \
             configuration; use a fresh --out directory",
            echo_path.parent().unwrap_or(Path::new(".")).display()
        )));
    }
    Ok(())
}
