//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::agent::TurnTrace;
use crate::eval::EvalResult;
use crate::harness::{DialogFile, SynthSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub entities: usize,
    pub relations: usize,
    pub facts: usize,
    pub memory_records: usize,
    pub gateway: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRequest {
    pub question: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub session_id: String,
    /// Rendered answer, absent when the turn failed.
    pub answer: Option<String>,
    pub result: Option<EvalResult>,
    pub trace: TurnTrace,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStatus {
    pub records: usize,
    pub path: Option<String>,
}

/// Model used for a batch run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchGateway {
    /// The gateway the service was started with.
    #[default]
    Configured,
    /// Simulated model answering from the gold forms of the submitted dialogs.
    Gold {
        #[serde(default)]
        typo_rate: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRequest {
    pub dialogs: DialogFile,
    #[serde(default)]
    pub gateway: BatchGateway,
    /// Start from (and grow) the service's global memory instead of an
    /// empty one.
    #[serde(default)]
    pub use_global_memory: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub seed: u64,
    #[serde(default)]
    pub spec: SynthSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub triples: String,
    pub labels: String,
    pub dialogs: DialogFile,
}

fn default_cases() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptBenchRequest {
    pub seed: u64,
    #[serde(default = "default_cases")]
    pub cases_per_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveRequest {
    pub seed: u64,
    /// Stream over the service's graph; a generated stream when absent.
    #[serde(default)]
    pub stream: Option<DialogFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
