//! Run manifest: config snapshot, content digests of every input, stage
//! timings, and artifact paths. Identical digests imply identical
//! artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    pub stage_timings_ms: BTreeMap<String, u128>,
    pub artifacts: BTreeMap<String, String>,
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("digest of {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn dir_digest(path: &Path) -> Result<String, CliError> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(path)
                .unwrap_or(entry.path())
                .display()
                .to_string();
            entries.push((rel, file_digest(entry.path())?));
        }
    }
    let mut hasher = Sha256::new();
    for (rel, digest) in entries {
        hasher.update(rel.as_bytes());
        hasher.update(b"\0");
        hasher.update(digest.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digest_inputs(config: &PipelineConfig) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    map.insert("input_csv".to_string(), file_digest(&config.input_csv)?);
    if let Some(lake) = &config.lake_dir {
        map.insert("lake_dir".to_string(), dir_digest(lake)?);
    }
    if let Some(kg) = &config.kg_tsv {
        map.insert("kg_tsv".to_string(), file_digest(kg)?);
    }
    if let Some(replay) = &config.oracle.replay_path {
        map.insert("replay".to_string(), file_digest(replay)?);
    }
    if let Some(gt) = &config.ground_truth {
        map.insert("ground_truth".to_string(), file_digest(gt)?);
    }
    Ok(map)
}
