//! Run manifests: resolved configuration plus input and output hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    /// Arguments after the program name, without `--jobs`.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// Path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value) -> Self {
        RunManifest {
            tool: format!("padapter {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            argv,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Default manifest location for a file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

/// Drops `--jobs N` / `--jobs=N`, which never affects outputs.
pub fn strip_jobs(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--jobs" {
            skip = true;
        } else if !a.starts_with("--jobs=") {
            out.push(a.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jobs_flag_removed() {
        let argv: Vec<String> = ["inpaint", "--jobs", "4", "--seed", "3", "--jobs=2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(strip_jobs(&argv), vec!["inpaint", "--seed", "3"]);
    }

    #[test]
    fn beside_appends_suffix() {
        assert_eq!(
            beside(Path::new("a/out.ppm")),
            PathBuf::from("a/out.ppm.run.json")
        );
    }
}
