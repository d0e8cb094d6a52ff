use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::Invalid;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun an experiment and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub kind: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the config with the output directory blanked, so that reruns into
/// another directory keep the same hash.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    sha256_hex(serde_json::to_string(&c).expect("config serialises").as_bytes())
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn write(dir: &Path, name: &str, cfg: &ExperimentConfig, files: &[String]) -> anyhow::Result<Manifest> {
    let artifacts = files
        .iter()
        .map(|f| Ok(Artifact { path: f.clone(), sha256: hash_file(&dir.join(f))? }))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let m = Manifest {
        tool: "roughflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: roughflow::VERSION.into(),
        kind: cfg.kind()?.name().into(),
        config_sha256: config_hash(cfg),
        seeds: cfg.seeds.clone(),
        threads: rayon::current_num_threads(),
        config: cfg.clone(),
        artifacts,
    };
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

pub fn read(path: &Path) -> anyhow::Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read manifest {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Invalid(format!("manifest {}: {e}", path.display())))?;
    if config_hash(&m.config) != m.config_sha256 {
        return Err(Invalid(format!("manifest {}: config hash does not match its config", path.display())).into());
    }
    Ok(m)
}
