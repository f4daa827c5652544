//! Provenance records and hash-checked reading of upstream artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig, Stage};
use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.json";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const HELDOUT_FILE: &str = "bounds_heldout.csv";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_META_FILE: &str = "trace.json";

/// Which stage writes an artifact.
pub fn producer(file: &str) -> Option<Stage> {
    match file {
        DATASET_FILE => Some(Stage::Generate),
        MODEL_FILE => Some(Stage::Identify),
        BOUNDS_FILE => Some(Stage::Bounds),
        CONTROLLER_FILE => Some(Stage::Terminal),
        TRACE_META_FILE => Some(Stage::Simulate),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    /// SHA-256 of the settings the stage depends on.
    pub config_hash: String,
    /// Upstream file name to SHA-256 of its bytes when it was read.
    pub inputs: BTreeMap<String, String>,
    /// Files written alongside this record, with their hashes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
    /// Values given on the command line in place of upstream artifacts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, stage: Stage) -> Self {
        Provenance {
            stage: stage.name().to_string(),
            config_hash: config.stage_hash(stage),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            overrides: BTreeMap::new(),
        }
    }
}

/// Artifact body tagged with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

/// An upstream artifact with the hash of the bytes it was parsed from.
pub struct Loaded<T> {
    pub value: T,
    pub sha256: String,
}

pub fn path_in(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Writes pretty JSON with a trailing newline and returns its hash.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, &text)?;
    Ok(sha256_hex(text.as_bytes()))
}

fn read_bytes(dir: &Path, file: &str) -> CliResult<Vec<u8>> {
    let path = path_in(dir, file);
    if !path.exists() {
        let stage = producer(file).map_or("the producing command", Stage::name);
        return Err(CliError::Missing(path.display().to_string(), stage));
    }
    Ok(std::fs::read(path)?)
}

/// Checks a provenance record against the current config and the files on disk.
pub fn check_provenance(dir: &Path, file: &str, prov: &Provenance, config: &ExperimentConfig) -> CliResult<()> {
    let stage = producer(file).ok_or_else(|| CliError::Input(format!("{file} is not a pipeline artifact")))?;
    if prov.config_hash != config.stage_hash(stage) {
        return Err(CliError::Stale(format!(
            "{file} was produced with different `{}` settings; rerun `kmpc {}`",
            stage.name(),
            stage.name()
        )));
    }
    for (input, recorded) in &prov.inputs {
        let path = path_in(dir, input);
        let current = if path.exists() { Some(file_sha256(&path)?) } else { None };
        if current.as_deref() != Some(recorded.as_str()) {
            return Err(CliError::Stale(format!("{file} was built from a different {input}; rerun `kmpc {}`", stage.name())));
        }
    }
    for (output, recorded) in &prov.outputs {
        let path = path_in(dir, output);
        let current = if path.exists() { Some(file_sha256(&path)?) } else { None };
        if current.as_deref() != Some(recorded.as_str()) {
            return Err(CliError::Stale(format!("{output} does not match the record in {file}")));
        }
    }
    Ok(())
}

/// Reads an artifact wrapped in [`Artifact`] and checks it is current.
pub fn load_artifact<T: DeserializeOwned>(
    dir: &Path,
    file: &str,
    config: &ExperimentConfig,
) -> CliResult<Loaded<Artifact<T>>> {
    let bytes = read_bytes(dir, file)?;
    let value: Artifact<T> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Input(format!("cannot parse {file}: {e}")))?;
    check_provenance(dir, file, &value.provenance, config)?;
    Ok(Loaded { value, sha256: sha256_hex(&bytes) })
}

/// Reads an artifact whose provenance lives in a `provenance` field of its own schema.
pub fn load_with_embedded<T: DeserializeOwned>(
    dir: &Path,
    file: &str,
    config: &ExperimentConfig,
    provenance: impl Fn(&T) -> Option<&serde_json::Value>,
) -> CliResult<Loaded<T>> {
    let bytes = read_bytes(dir, file)?;
    let value: T =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("cannot parse {file}: {e}")))?;
    let raw = provenance(&value).ok_or_else(|| CliError::Stale(format!("{file} carries no provenance record")))?;
    let prov: Provenance = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Stale(format!("{file} has an unreadable provenance record: {e}")))?;
    check_provenance(dir, file, &prov, config)?;
    Ok(Loaded { value, sha256: sha256_hex(&bytes) })
}
