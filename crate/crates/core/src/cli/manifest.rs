//! Per-run provenance record.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CliError, EffectiveConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to reproduce a run. Only `timings` varies between
/// identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub effective_config: EffectiveConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: EffectiveConfig) -> Self {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: sha256_hex(&canonical),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            effective_config: config,
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    /// Run `f` and record its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    /// Write `contents` to `dir/name` and list it as an output.
    pub fn write_output(&mut self, dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Write the manifest itself as `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        self.outputs.push(MANIFEST_NAME.to_string());
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";
