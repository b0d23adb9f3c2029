use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::{sha256_file, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub argv: Vec<String>,
    /// Fully resolved settings, defaults included.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn digest_inputs(paths: &[&Path]) -> CliResult<Vec<InputDigest>> {
        paths.iter().map(|p| Ok(InputDigest { path: p.to_path_buf(), sha256: sha256_file(p)? })).collect()
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        write_json(&out_dir.join(MANIFEST_FILE), self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Checks that recorded inputs still have the recorded contents.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for input in &self.inputs {
            let path = if input.path.is_absolute() { input.path.clone() } else { self.cwd.join(&input.path) };
            let now = sha256_file(&path)?;
            if now != input.sha256 {
                return Err(CliError::Runtime(format!("{} changed since the manifest was written", path.display())));
            }
        }
        Ok(())
    }
}
