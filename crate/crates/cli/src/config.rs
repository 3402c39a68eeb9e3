//! Pipeline configuration: a JSON file plus `--stage-overrides` patches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_csv: PathBuf,
    pub key: String,
    pub exposure: String,
    pub outcome: String,
    #[serde(default)]
    pub missing_marker: String,

    pub lake_dir: Option<PathBuf>,
    pub kg_tsv: Option<PathBuf>,
    #[serde(default = "default_kg_hops")]
    pub kg_hops: u8,
    #[serde(default = "default_kg_label_predicate")]
    pub kg_label_predicate: String,

    #[serde(default = "default_min_containment")]
    pub min_containment: f64,
    #[serde(default = "default_coverage_floor")]
    pub coverage_floor: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub alpha_bias: f64,
    #[serde(default = "default_max_cond")]
    pub max_cond: usize,
    #[serde(default = "default_split_threshold")]
    pub split_threshold: f64,
    #[serde(default = "default_max_clusters")]
    pub max_clusters: usize,

    #[serde(default)]
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    pub ground_truth: Option<PathBuf>,
}

fn default_kg_hops() -> u8 {
    1
}
fn default_kg_label_predicate() -> String {
    "label".to_string()
}
fn default_min_containment() -> f64 {
    0.5
}
fn default_coverage_floor() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_max_cond() -> usize {
    3
}
fn default_split_threshold() -> f64 {
    1.0
}
fn default_max_clusters() -> usize {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_backend")]
    pub backend: String,
    pub replay_path: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
    pub rules_path: Option<PathBuf>,
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_rps")]
    pub rps: f64,
    /// Header carrying the secret from ORACLE_AUTH_VALUE.
    pub auth_header_name: Option<String>,
}

fn default_backend() -> String {
    "heuristic".to_string()
}
fn default_timeout_s() -> u64 {
    30
}
fn default_max_inflight() -> usize {
    4
}
fn default_rps() -> f64 {
    2.0
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            backend: default_backend(),
            replay_path: None,
            strict: false,
            rules_path: None,
            endpoint: None,
            timeout_s: default_timeout_s(),
            max_inflight: default_max_inflight(),
            rps: default_rps(),
            auth_header_name: None,
        }
    }
}

impl PipelineConfig {
    /// Load the config file and apply `key=value` overrides by dotted
    /// path, e.g. `alpha=0.01` or `oracle.backend=replay`. Values parse
    /// as JSON literals first, falling back to strings.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config json: {e}")))?;
        for patch in overrides {
            let (key, raw) = patch
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override missing '=': {patch}")))?;
            let parsed = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut cursor = &mut value;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                cursor = cursor
                    .as_object_mut()
                    .ok_or_else(|| CliError::Config(format!("override path {key} not an object")))?
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::json!({}));
            }
            cursor
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("override path {key} not an object")))?
                .insert(parts[parts.len() - 1].to_string(), parsed);
        }
        let config: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [("alpha", self.alpha), ("alpha_bias", self.alpha_bias)] {
            if !(0.0 < v && v < 1.0) {
                return Err(CliError::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.exposure == self.outcome {
            return Err(CliError::Config(
                "exposure and outcome must be distinct columns".to_string(),
            ));
        }
        if !(1..=2).contains(&self.kg_hops) {
            return Err(CliError::Config(format!(
                "kg_hops must be 1 or 2, got {}",
                self.kg_hops
            )));
        }
        match self.oracle.backend.as_str() {
            "replay" => {
                if self.oracle.replay_path.is_none() {
                    return Err(CliError::Config(
                        "oracle.backend=replay requires oracle.replay_path".to_string(),
                    ));
                }
            }
            "heuristic" => {}
            "http" => {
                if self.oracle.endpoint.is_none() {
                    return Err(CliError::Config(
                        "oracle.backend=http requires oracle.endpoint".to_string(),
                    ));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown oracle backend: {other}"
                )));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
