//! Run manifests: a JSON record written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    /// `None` means the default pool (all cores).
    pub threads: Option<usize>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    /// Informational results; never needed to reproduce the run.
    pub report: Value,
    pub wall_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(subcommand: &str, threads: Option<usize>, config: impl Serialize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            config: serde_json::to_value(config).expect("config serializes"),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            report: Value::Null,
            wall_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.outputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    /// Stamps the elapsed time and writes the manifest to `path`.
    pub fn finish(mut self, path: &Path) -> Result<(), Failure> {
        if let Some(t) = self.started {
            self.wall_seconds = t.elapsed().as_secs_f64();
        }
        self.outputs
            .insert("manifest".to_string(), path.to_path_buf());
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_file(path, text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::data(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| Failure::data(anyhow::anyhow!("writing {}: {e}", path.display())))
}
