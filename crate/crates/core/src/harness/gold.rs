//! A simulated model that answers from gold annotations, used to drive
//! batch runs and trend reports without an endpoint.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::dialog::DialogFile;
use crate::kg::KnowledgeGraph;
use crate::llm::{fence, GatewayError, LlmGateway, PromptBundle, TaskTag};
use crate::memory::{abstract_question, entity_surfaces};
use crate::sexpr::{parse, Function, SExpr};
use crate::template::{decompose, QuestionType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoldMode {
    /// Always returns the gold plan.
    Exact,
    /// Returns the gold plan only when a plan exemplar carries the
    /// question's abstracted pattern, and a degraded plan otherwise.
    ExemplarDependent,
}

struct Annotation {
    qtype: QuestionType,
    sexpr: SExpr,
    pattern: String,
}

pub struct GoldGateway {
    by_question: BTreeMap<String, Annotation>,
    labels: BTreeMap<String, String>,
    mode: GoldMode,
    typo_rate: f64,
}

fn opposite(f: Function) -> Function {
    match f {
        Function::Gt => Function::Le,
        Function::Le => Function::Gt,
        Function::Ge => Function::Lt,
        Function::Lt => Function::Ge,
        Function::Eq => Function::Lt,
        Function::ArgMax => Function::ArgMin,
        Function::ArgMin => Function::ArgMax,
        other => other,
    }
}

pub(crate) fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_ascii_alphabetic()).collect();
    if letters.len() < 4 {
        return word.to_string();
    }
    let i = letters[rng.gen_range(1..letters.len())];
    match rng.gen_range(0..3) {
        0 => {
            chars.remove(i);
        }
        1 => chars[i] = if chars[i] == 'e' { 'a' } else { 'e' },
        _ => chars.insert(i, chars[i]),
    }
    chars.into_iter().collect()
}

impl GoldGateway {
    pub fn new(dialogs: &DialogFile, g: &KnowledgeGraph, mode: GoldMode) -> Self {
        let mut labels = BTreeMap::new();
        for e in g.entities() {
            labels.insert(e.as_str().to_string(), g.entity_label(e).replace(' ', "_"));
        }
        for r in g.relations() {
            labels.insert(r.as_str().to_string(), g.relation_label(r).replace(' ', "_"));
        }
        let mut by_question = BTreeMap::new();
        for t in dialogs.turns() {
            let Some(sexpr) = &t.gold_sexpr else { continue };
            let q = t.resolved_question().to_string();
            let pattern = abstract_question(&q, &entity_surfaces(sexpr, g));
            by_question.entry(q).or_insert(Annotation {
                qtype: t.qtype,
                sexpr: sexpr.clone(),
                pattern,
            });
        }
        GoldGateway {
            by_question,
            labels,
            mode,
            typo_rate: 0.0,
        }
    }

    /// Misspells drafted surfaces with the given per-leaf probability.
    pub fn with_typo_rate(mut self, rate: f64) -> Self {
        self.typo_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn lookup(&self, task: TaskTag, question: &str) -> Result<&Annotation, GatewayError> {
        self.by_question
            .get(question.trim())
            .ok_or_else(|| GatewayError::NoFixture {
                task,
                hash: crate::llm::request_hash(task, question),
            })
    }

    fn surface_form(&self, core: &SExpr, question: &str) -> String {
        let seed = u64::from_le_bytes(Sha256::digest(question.as_bytes())[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        core.map_leaves(&mut |leaf| {
            let (id, is_entity) = match leaf {
                SExpr::Entity(s) => (s, true),
                SExpr::Relation(s) => (s, false),
                other => return other.clone(),
            };
            let mut text = self.labels.get(id).cloned().unwrap_or_else(|| id.clone());
            if self.typo_rate > 0.0 && rng.gen_bool(self.typo_rate) {
                text = typo(&text, &mut rng);
            }
            if is_entity {
                SExpr::entity(text)
            } else {
                SExpr::relation(text)
            }
        })
        .to_string()
    }

    fn plan(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let mut question = None;
        let mut cores: Vec<SExpr> = Vec::new();
        let mut section = "";
        for line in bundle.payload.lines() {
            if line.ends_with(':') || line.starts_with("Candidate ") {
                section = if line.starts_with("Question") {
                    "question"
                } else if line.starts_with("Candidate S-expression Core") {
                    "cores"
                } else {
                    "other"
                };
                continue;
            }
            match section {
                "question" if question.is_none() && !line.trim().is_empty() => question = Some(line.trim()),
                "cores" => {
                    if let Some(c) = line.strip_prefix("- ") {
                        cores.push(parse(c).map_err(|e| GatewayError::Plan(e.to_string()))?);
                    }
                }
                _ => {}
            }
        }
        let question = question.ok_or_else(|| GatewayError::Plan("payload without a question".into()))?;
        let ann = self.lookup(TaskTag::PlanGen, question)?;
        let (body, mut plan) = decompose(&ann.sexpr);
        for (i, v) in plan.variables.values_mut().enumerate() {
            if !cores.contains(v) {
                if let Some(c) = cores.get(i) {
                    *v = c.clone();
                }
            }
        }
        let informed = bundle.exemplars.iter().any(|x| x.input == ann.pattern);
        if self.mode == GoldMode::ExemplarDependent && !informed {
            for f in plan.functions.values_mut() {
                *f = opposite(*f);
            }
        }
        let mut doc = serde_json::to_value(&plan).expect("plans serialize");
        doc["template"] = serde_json::Value::String(body.to_string());
        Ok(fence(&doc.to_string()))
    }
}

impl LlmGateway for GoldGateway {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        match bundle.task {
            TaskTag::Coref => Err(GatewayError::NoFixture {
                task: TaskTag::Coref,
                hash: crate::llm::request_hash(TaskTag::Coref, &bundle.payload),
            }),
            TaskTag::CoreGen => {
                let question = bundle.payload.lines().next().unwrap_or_default();
                let ann = self.lookup(TaskTag::CoreGen, question)?;
                let (_, plan) = decompose(&ann.sexpr);
                let lines: Vec<String> = plan
                    .variables
                    .values()
                    .map(|c| self.surface_form(c, question))
                    .collect();
                Ok(fence(&lines.join("\n")))
            }
            TaskTag::TypePred => Ok(fence(self.lookup(TaskTag::TypePred, &bundle.payload)?.qtype.name())),
            TaskTag::PlanGen => self.plan(bundle),
        }
    }
}
