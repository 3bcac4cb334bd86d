//! Per-command run manifests recording configuration and content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use opcap_core::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, sha256_file, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_cache_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Input role to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the run directory) to content hash.
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            vocab_sha256: None,
            detect_cache_sha256: None,
            checkpoint: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn path_for(dir: &Path, command: &str) -> PathBuf {
        dir.join(format!("manifest-{command}.json"))
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes `dir/name` as an output.
    pub fn add_output(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_for(dir, &self.command);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Fails when `file` no longer matches the hash that a manifest next to it
/// recorded under `outputs`. Files without a sibling manifest pass.
pub fn check_fresh(file: &Path, command: &str) -> Result<()> {
    let dir = file.parent().unwrap_or(Path::new("."));
    let mpath = RunManifest::path_for(dir, command);
    if !mpath.exists() {
        return Ok(());
    }
    let manifest = RunManifest::read(&mpath)?;
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match manifest.outputs.get(&name) {
        Some(expected) if *expected != sha256_file(file)? => Err(Error::Data(format!(
            "{} changed since {} recorded it; rerun `{command}`",
            file.display(),
            mpath.display()
        ))),
        _ => Ok(()),
    }
}
