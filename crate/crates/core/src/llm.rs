//! Text-generation gateway for the four prompted tasks, with a scripted
//! implementation keyed by request hash and an HTTP endpoint client.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibrate::CalibratedCore;
use crate::sexpr::{parse_template, type_check, SExpr};
use crate::template::{transform, QuestionType, ReplacementPlan, Template, TemplateSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Coref,
    CoreGen,
    TypePred,
    PlanGen,
}

impl TaskTag {
    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Coref => "coref",
            TaskTag::CoreGen => "core_gen",
            TaskTag::TypePred => "type_pred",
            TaskTag::PlanGen => "plan_gen",
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const TYPE_EXEMPLARS_PER_TYPE: usize = 3;
pub const PLAN_EXEMPLARS_PER_TEMPLATE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: TaskTag,
    pub instruction: String,
    pub exemplars: Vec<Exemplar>,
    pub payload: String,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        let mut s = format!("{}\n", self.instruction);
        for ex in &self.exemplars {
            s.push_str(&format!("\nInput:\n{}\nOutput:\n{}\n", ex.input, ex.output));
        }
        s.push_str(&format!("\nInput:\n{}\nOutput:\n", self.payload));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("no scripted response for {task} request {hash}")]
    NoFixture { task: TaskTag, hash: String },
    #[error("response violates the {task} contract: {reason}")]
    Format { task: TaskTag, reason: String },
    #[error("endpoint request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint error: {0}")]
    Transport(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("{0}")]
    Fixture(String),
}

pub trait LlmGateway: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError>;
}

/// Fixture key: hex SHA-256 of `task` and the request payload.
pub fn request_hash(task: TaskTag, payload: &str) -> String {
    let mut h = Sha256::new();
    h.update(task.name().as_bytes());
    h.update(b"\n");
    h.update(payload.as_bytes());
    hex::encode(h.finalize())
}

/// Deterministic gateway answering from a request-hash map.
#[derive(Clone, Debug, Default)]
pub struct ScriptedGateway {
    responses: BTreeMap<String, String>,
}

impl ScriptedGateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: TaskTag, payload: &str, response: impl Into<String>) {
        self.responses.insert(request_hash(task, payload), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads every `<hash>.txt` file of a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let mut g = Self::new();
        let entries = fs::read_dir(dir).map_err(|e| GatewayError::Fixture(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| GatewayError::Fixture(e.to_string()))?.path();
            if path.extension().and_then(|x| x.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body =
                fs::read_to_string(&path).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
            g.responses.insert(stem.to_string(), body);
        }
        Ok(g)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (hash, body) in &self.responses {
            fs::write(dir.join(format!("{hash}.txt")), body)?;
        }
        Ok(())
    }
}

impl LlmGateway for ScriptedGateway {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let hash = request_hash(bundle.task, &bundle.payload);
        self.responses.get(&hash).cloned().ok_or(GatewayError::NoFixture {
            task: bundle.task,
            hash,
        })
    }
}

/// Connection settings for an OpenAI-style chat completion endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: BTreeMap<TaskTag, f64>,
    /// Optional per-task model override.
    pub models: BTreeMap<TaskTag, String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            token_env: "SEAL_LLM_TOKEN".into(),
            timeout_secs: 60,
            max_retries: 3,
            temperature: BTreeMap::new(),
            models: BTreeMap::new(),
        }
    }
}

pub struct EndpointGateway {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl EndpointGateway {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(EndpointGateway { cfg, client })
    }

    fn attempt(&self, bundle: &PromptBundle) -> Result<String, (bool, GatewayError)> {
        let model = self.cfg.models.get(&bundle.task).unwrap_or(&self.cfg.model);
        let body = serde_json::json!({
            "model": model,
            "temperature": self.cfg.temperature.get(&bundle.task).copied().unwrap_or(0.0),
            "messages": [
                { "role": "system", "content": bundle.instruction },
                { "role": "user", "content": bundle.render() },
            ],
        });
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/')))
            .json(&body);
        if let Ok(token) = std::env::var(&self.cfg.token_env) {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                (true, GatewayError::Timeout(Duration::from_secs(self.cfg.timeout_secs)))
            } else {
                (true, GatewayError::Transport(e.to_string()))
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err((transient, GatewayError::Transport(format!("HTTP {status}"))));
        }
        let v: serde_json::Value = resp
            .json()
            .map_err(|e| (false, GatewayError::Transport(e.to_string())))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, GatewayError::Transport("response has no message content".into())))
    }
}

impl LlmGateway for EndpointGateway {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let mut delay = Duration::from_millis(250);
        let mut tries = 0;
        loop {
            match self.attempt(bundle) {
                Ok(text) => return Ok(text),
                Err((true, err)) if tries < self.cfg.max_retries => {
                    tracing::warn!(task = %bundle.task, %err, "retrying endpoint call");
                    std::thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                Err((_, err)) => return Err(err),
            }
        }
    }
}

/// Content of the first fenced block of a response.
pub fn fenced_block(task: TaskTag, text: &str) -> Result<String, GatewayError> {
    let start = text.find("```").ok_or_else(|| GatewayError::Format {
        task,
        reason: "no fenced block".into(),
    })?;
    let rest = &text[start + 3..];
    // optional info string on the opening fence line
    let body_start = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
    let body = &rest[body_start..];
    let end = body.find("```").ok_or_else(|| GatewayError::Format {
        task,
        reason: "unterminated fenced block".into(),
    })?;
    Ok(body[..end].trim().to_string())
}

pub fn fence(body: &str) -> String {
    format!("```\n{}\n```", body.trim())
}

/// Calls the gateway and validates the reply with `check`, reprompting
/// once on a contract violation.
fn ask<T>(
    llm: &dyn LlmGateway,
    bundle: PromptBundle,
    check: impl Fn(&str) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let first = llm.complete(&bundle).and_then(|r| check(&r));
    match first {
        Err(GatewayError::Format { .. }) => {
            let mut again = bundle;
            again
                .instruction
                .push_str("\nAnswer with exactly one fenced block in the required format.");
            llm.complete(&again).and_then(|r| check(&r))
        }
        other => other,
    }
}

pub const COREF_INSTRUCTION: &str = "Rewrite the user's last question as a complete, standalone question, \
resolving pronouns and ellipsis from the dialog history and the entity annotations. Reply with one fenced line.";
pub const CORE_INSTRUCTION: &str = "Identify each independent query object in the question and write one \
S-expression core for it using only JOIN, R, AND, VALUES and IS_TRUE. Reply with a fenced block, one core per line.";
pub const TYPE_INSTRUCTION: &str = "Classify the question as one of simple, verify, count, compare, \
compare_and_count, optimize. Reply with the type name in a fenced block.";
pub const PLAN_INSTRUCTION: &str = "Choose a template for the question from the candidates (or write a new one \
when none fits) and a replacement plan over the given cores. Reply with a fenced JSON document with keys \
template, variables, constants, functions.";

pub fn coref_bundle(payload: String) -> PromptBundle {
    PromptBundle {
        task: TaskTag::Coref,
        instruction: COREF_INSTRUCTION.into(),
        exemplars: Vec::new(),
        payload,
    }
}

pub fn resolve_with_gateway(payload: String, llm: &dyn LlmGateway) -> Result<String, GatewayError> {
    ask(llm, coref_bundle(payload), |r| {
        let line = fenced_block(TaskTag::Coref, r)?;
        if line.is_empty() || line.contains('\n') {
            return Err(GatewayError::Format {
                task: TaskTag::Coref,
                reason: "expected one non-empty line".into(),
            });
        }
        Ok(line)
    })
}

/// Raw core drafts for a question, one per query object.
pub fn draft_cores(question: &str, exemplars: &[Exemplar], llm: &dyn LlmGateway) -> Result<Vec<String>, GatewayError> {
    draft_cores_with(question, CORE_INSTRUCTION, exemplars, llm)
}

pub fn draft_cores_with(
    payload: &str,
    instruction: &str,
    exemplars: &[Exemplar],
    llm: &dyn LlmGateway,
) -> Result<Vec<String>, GatewayError> {
    let bundle = PromptBundle {
        task: TaskTag::CoreGen,
        instruction: instruction.into(),
        exemplars: exemplars.to_vec(),
        payload: payload.into(),
    };
    ask(llm, bundle, |r| {
        let block = fenced_block(TaskTag::CoreGen, r)?;
        let lines: Vec<String> = block
            .lines()
            .map(|l| l.trim().trim_end_matches(',').trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty()
            || lines
                .iter()
                .any(|l| !l.starts_with('(') && l.contains(char::is_whitespace))
        {
            return Err(GatewayError::Format {
                task: TaskTag::CoreGen,
                reason: "expected one core per line".into(),
            });
        }
        Ok(lines)
    })
}

pub fn predict_type(
    question: &str,
    exemplars: &[Exemplar],
    llm: &dyn LlmGateway,
) -> Result<QuestionType, GatewayError> {
    let bundle = PromptBundle {
        task: TaskTag::TypePred,
        instruction: TYPE_INSTRUCTION.into(),
        exemplars: exemplars.to_vec(),
        payload: question.into(),
    };
    ask(llm, bundle, |r| {
        let token = fenced_block(TaskTag::TypePred, r)?;
        token
            .parse()
            .map_err(|e: crate::template::UnknownQuestionType| GatewayError::Format {
                task: TaskTag::TypePred,
                reason: e.to_string(),
            })
    })
}

/// The plan document exchanged with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub template: String,
    #[serde(flatten)]
    pub plan: ReplacementPlan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanChoice {
    pub template: Template,
    pub plan: ReplacementPlan,
}

/// Payload shown to the model for template and plan selection.
pub fn plan_payload(question: &str, qtype: QuestionType, templates: &[Template], cores: &[CalibratedCore]) -> String {
    let mut s = format!("Question:\n{question}\n\nCandidate Templates (Predicted question type: {qtype}):\n");
    for t in templates {
        s.push_str(&format!("- {}\n", t.body));
    }
    s.push_str("\nCandidate S-expression Core:\n");
    for c in cores {
        s.push_str(&format!("- {}\n", c.expr));
    }
    s
}

pub fn select_plan(
    question: &str,
    qtype: QuestionType,
    templates: &[Template],
    cores: &[CalibratedCore],
    exemplars: &[Exemplar],
    llm: &dyn LlmGateway,
) -> Result<PlanChoice, GatewayError> {
    if templates.is_empty() {
        return Err(GatewayError::Plan("no candidate templates".into()));
    }
    let bundle = PromptBundle {
        task: TaskTag::PlanGen,
        instruction: PLAN_INSTRUCTION.into(),
        exemplars: exemplars.to_vec(),
        payload: plan_payload(question, qtype, templates, cores),
    };
    let doc = ask(llm, bundle, |r| {
        let block = fenced_block(TaskTag::PlanGen, r)?;
        serde_json::from_str::<PlanDocument>(&block).map_err(|e| GatewayError::Format {
            task: TaskTag::PlanGen,
            reason: e.to_string(),
        })
    })?;
    validate_plan(doc, qtype, templates, cores)
}

fn validate_plan(
    doc: PlanDocument,
    qtype: QuestionType,
    templates: &[Template],
    cores: &[CalibratedCore],
) -> Result<PlanChoice, GatewayError> {
    let body = parse_template(&doc.template).map_err(|e| GatewayError::Plan(format!("template: {e}")))?;
    let known: Vec<&SExpr> = cores.iter().map(|c| &c.expr).collect();
    for (k, v) in &doc.plan.variables {
        if !known.contains(&v) {
            return Err(GatewayError::Plan(format!("`{k}` refers to unknown core `{v}`")));
        }
    }
    let template = match templates.iter().find(|t| t.body == body) {
        Some(t) => t.clone(),
        None => Template {
            id: "generated".into(),
            qtype,
            body,
            source: TemplateSource::Generated,
        },
    };
    let composed = transform(&template, &doc.plan).map_err(|e| GatewayError::Plan(e.to_string()))?;
    type_check(&composed).map_err(|e| GatewayError::Plan(e.to_string()))?;
    Ok(PlanChoice {
        template,
        plan: doc.plan,
    })
}
