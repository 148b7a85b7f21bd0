use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use terrain_embed::checkpoint::{sha256_file, write_atomic};

/// Provenance of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every flag after defaults and config-file values were applied.
    pub config: serde_json::Value,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// The only field allowed to differ between identical invocations.
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Record a model spec; `id` has no file behind it.
    pub fn model_input(&mut self, spec: &str) -> anyhow::Result<Option<String>> {
        if spec == "id" {
            return Ok(None);
        }
        let hash = sha256_file(Path::new(spec))?;
        self.inputs.insert(spec.to_string(), hash.clone());
        Ok(Some(hash))
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `<file>.run.json` beside a file output.
pub fn beside(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Manifest location inside a directory output.
pub fn inside(dir: &Path) -> PathBuf {
    dir.join("run.json")
}
