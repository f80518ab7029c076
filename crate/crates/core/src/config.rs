//! TOML configuration for the service and command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::llm::EndpointConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Where model responses come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewaySpec {
    /// No model; coreference falls back to rules and drafting fails.
    #[default]
    None,
    Endpoint(EndpointConfig),
    /// Directory of `<hash>.txt` scripted responses.
    Scripted {
        dir: PathBuf,
    },
    /// A bundled fixture, served together with its graph.
    Fixture {
        name: String,
    },
    /// Simulated model answering from the gold forms of a dialog file.
    Gold {
        dialogs: PathBuf,
        #[serde(default)]
        typo_rate: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphPaths {
    pub triples: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SealConfig {
    pub agent: AgentConfig,
    pub graph: Option<GraphPaths>,
    /// JSON-lines file backing the global memory.
    pub memory: Option<PathBuf>,
    pub llm: GatewaySpec,
}

impl SealConfig {
    pub fn from_toml(path_name: &str, text: &str) -> Result<Self, ConfigError> {
        let cfg: SealConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path_name.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&path.display().to_string(), &text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent
            .calibration()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.agent.min_link_score) {
            return Err(ConfigError::Invalid("agent.min_link_score must lie in [0, 1]".into()));
        }
        if let GatewaySpec::Gold { typo_rate, .. } = self.llm {
            if !(0.0..=1.0).contains(&typo_rate) {
                return Err(ConfigError::Invalid("llm.typo_rate must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file() {
        let text = r#"
memory = "mem.jsonl"

[agent]
link_k = 3
max_retries = 2

[agent.ablations]
no_memory = true

[graph]
triples = "kg.tsv"
labels = "labels.tsv"

[llm]
kind = "endpoint"
base_url = "http://localhost:9000/v1"
model = "m"
"#;
        let cfg = SealConfig::from_toml("t.toml", text).unwrap();
        assert_eq!(cfg.agent.link_k, 3);
        assert_eq!(cfg.agent.keep_variants, 1);
        assert!(cfg.agent.ablations.no_memory);
        assert_eq!(cfg.memory, Some(PathBuf::from("mem.jsonl")));
        match cfg.llm {
            GatewaySpec::Endpoint(e) => {
                assert_eq!(e.model, "m");
                assert_eq!(e.timeout_secs, 60);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(SealConfig::from_toml("t", "").unwrap(), SealConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            SealConfig::from_toml("t", "[agent]\nlink_k = 2\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            SealConfig::from_toml("t", "[agent\n"),
            Err(ConfigError::Parse { .. })
        ));
    }
}
