use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Everything needed to repeat the run.
    pub config: serde_json::Value,
    /// Values derived from the data during the run.
    #[serde(default)]
    pub resolved: serde_json::Value,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name, relative to the manifest, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Records `paths` under their canonical names.
pub fn digest_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for path in paths {
        let canonical = fs::canonicalize(path).map_err(|e| CliError::io(*path, e))?;
        out.insert(canonical.display().to_string(), sha256_file(&canonical)?);
    }
    Ok(out)
}

pub fn digest_outputs(dir: &Path, names: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    names
        .iter()
        .map(|name| Ok((name.clone(), sha256_file(&dir.join(name))?)))
        .collect()
}

impl RunManifest {
    pub fn begin(command: &str, seed: u64, config: &impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config).map_err(|e| CliError::format("config", e))?,
            resolved: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: now(),
            finished: String::new(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format("manifest", e))
    }

    /// Reads a manifest written by `command` and decodes its config.
    pub fn read_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<(Self, T), CliError> {
        let manifest = Self::read(path)?;
        if manifest.command != command {
            return Err(CliError::Usage(format!(
                "{} records a `{}` run, not `{command}`",
                path.display(),
                manifest.command
            )));
        }
        let config = serde_json::from_value(manifest.config.clone())
            .map_err(|e| CliError::format("manifest config", e))?;
        Ok((manifest, config))
    }

    /// Fails unless every recorded input still has its recorded digest.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (path, digest) in &self.inputs {
            let actual = sha256_file(Path::new(path))?;
            if &actual != digest {
                return Err(CliError::Integrity(format!("{path} changed since the recorded run")));
            }
        }
        Ok(())
    }

    /// Fails unless every recorded output in `dir` has its recorded digest.
    pub fn verify_outputs(&self, dir: &Path) -> Result<(), CliError> {
        for (name, digest) in &self.outputs {
            let path = dir.join(name);
            if !path.exists() {
                return Err(CliError::Integrity(format!("{} is missing", path.display())));
            }
            if &sha256_file(&path)? != digest {
                return Err(CliError::Integrity(format!(
                    "{} does not match its manifest digest",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Digests `outputs` in `dir`, stamps the finish time and writes the
    /// manifest beside them.
    pub fn finish(mut self, dir: &Path, outputs: &[String]) -> Result<PathBuf, CliError> {
        self.outputs = digest_outputs(dir, outputs)?;
        self.finished = now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::format("manifest", e))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
