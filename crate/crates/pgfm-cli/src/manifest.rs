//! Run manifest: tool identity, config echo, and content hashes of every
//! artifact, so a finished run can be verified and reproduced bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pgfm::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// "complete" or "failed".
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_stage: Option<String>,
    /// Every effective parameter, including defaults.
    pub config: BTreeMap<String, String>,
    /// Artifact file name -> SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn hash_present(out: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut artifacts = BTreeMap::new();
    for name in names {
        let path = out.join(name);
        if path.is_file() {
            artifacts.insert(name.to_string(), sha256_file(&path)?);
        }
    }
    Ok(artifacts)
}

impl Manifest {
    pub fn complete(cfg: &RunConfig, out: &Path, names: &[&str]) -> Result<Manifest> {
        for name in names {
            if !out.join(name).is_file() {
                return Err(Error::Data(format!("expected artifact '{name}' is missing")));
            }
        }
        Ok(Manifest {
            tool: "pgfm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "complete".into(),
            failed_stage: None,
            config: cfg.echo(),
            artifacts: hash_present(out, names)?,
        })
    }

    /// Manifest for a run that died in `stage`; whatever artifacts already
    /// exist are listed so the directory is explicitly marked incomplete.
    pub fn failed(cfg: &RunConfig, out: &Path, stage: &str, names: &[&str]) -> Result<Manifest> {
        Ok(Manifest {
            tool: "pgfm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "failed".into(),
            failed_stage: Some(stage.to_string()),
            config: cfg.echo(),
            artifacts: hash_present(out, names)?,
        })
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(out.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(out: &Path) -> Result<Manifest> {
        let path = out.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            Error::Data(format!("no manifest at {}; run the pipeline first", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("malformed manifest: {e}")))
    }

    /// Check the run is complete and every listed artifact still matches its
    /// recorded hash; missing or tampered files are all reported at once.
    pub fn verify(&self, out: &Path) -> Result<()> {
        if self.status != "complete" {
            return Err(Error::Data(format!(
                "manifest marks the run incomplete (failed at stage '{}')",
                self.failed_stage.as_deref().unwrap_or("unknown")
            )));
        }
        let mut problems = Vec::new();
        for (name, recorded) in &self.artifacts {
            let path = out.join(name);
            if !path.is_file() {
                problems.push(format!("{name}: missing"));
            } else if &sha256_file(&path)? != recorded {
                problems.push(format!("{name}: content hash mismatch"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "manifest verification failed: {}",
                problems.join("; ")
            )))
        }
    }

    /// Rebuild the run configuration from the config echo.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut text = String::new();
        for (k, v) in &self.config {
            if v.is_empty() {
                continue;
            }
            text.push_str(&format!("{k} = {v}\n"));
        }
        RunConfig::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.txt"), "original").unwrap();
        let cfg = RunConfig::default();
        let m = Manifest::complete(&cfg, dir.path(), &["data.txt"]).unwrap();
        m.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("data.txt"), "tampered").unwrap();
        let err = m.verify(dir.path()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"));
    }

    #[test]
    fn verify_lists_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "a").unwrap();
        std::fs::write(dir.path().join("b.txt"), "b").unwrap();
        let cfg = RunConfig::default();
        let m = Manifest::complete(&cfg, dir.path(), &["a.txt", "b.txt"]).unwrap();
        std::fs::remove_file(dir.path().join("b.txt")).unwrap();
        let err = m.verify(dir.path()).unwrap_err();
        assert!(err.to_string().contains("b.txt: missing"));
    }

    #[test]
    fn config_round_trips_through_echo() {
        let mut cfg = RunConfig::default();
        cfg.ipc = 4;
        cfg.guidance.lambda = 0.25;
        cfg.seed = 7;
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::complete(&cfg, dir.path(), &[]).unwrap();
        m.save(dir.path()).unwrap();
        let loaded = Manifest::load(dir.path()).unwrap();
        assert_eq!(loaded.run_config().unwrap(), cfg);
    }
}
