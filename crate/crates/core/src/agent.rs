//! Per-turn pipeline: coreference, core drafting, calibration, typing,
//! template selection, composition, execution, validation, the correction
//! ladder and memory write-back.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_with, identity_calibration, CalibratedCore, Calibration, CalibrationConfig, Linker};
use crate::eval::{eval, EvalResult};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::llm::{self, Exemplar, LlmGateway, PlanChoice};
use crate::memory::{entity_surfaces, resolve_question, DialogState, DialogTurn, GlobalMemory};
use crate::sexpr::{parse, type_check, SExpr};
use crate::sparql::{execute_sparql, to_sparql};
use crate::template::{candidate_templates, refine_type, transform, QuestionType, ReplacementPlan, Template};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_memory: bool,
    pub no_calibration: bool,
    pub no_core_extraction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_retries: usize,
    pub link_k: usize,
    pub keep_variants: usize,
    pub min_link_score: f64,
    pub ablations: Ablations,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_retries: 3,
            link_k: 1,
            keep_variants: 1,
            min_link_score: 0.5,
            ablations: Ablations::default(),
        }
    }
}

impl AgentConfig {
    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            link_k: self.link_k,
            keep_variants: self.keep_variants,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    LinkingFailure,
    StructuralInvalidity,
    EmptyResult,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCause::LinkingFailure => "linking_failure",
            FailureCause::StructuralInvalidity => "structural_invalidity",
            FailureCause::EmptyResult => "empty_result",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub syntactic_ok: bool,
    pub alignment_ok: bool,
    pub nonempty_ok: bool,
    pub cause: Option<FailureCause>,
}

impl ValidationVerdict {
    pub fn passed(&self) -> bool {
        self.syntactic_ok && self.alignment_ok && self.nonempty_ok
    }

    fn failed(cause: FailureCause) -> Self {
        ValidationVerdict {
            syntactic_ok: cause != FailureCause::StructuralInvalidity,
            alignment_ok: cause != FailureCause::LinkingFailure,
            nonempty_ok: cause != FailureCause::EmptyResult,
            cause: Some(cause),
        }
    }
}

/// Reflection check of a composed form and its result. Booleans and
/// integers always count as answers.
pub fn validate(e: &SExpr, g: &KnowledgeGraph, result: Option<&EvalResult>) -> ValidationVerdict {
    let syntactic_ok = e.placeholders().is_empty() && type_check(e).is_ok();
    let alignment_ok = e.entities().iter().all(|id| g.contains_entity(&EntityId::new(*id)))
        && e.relations().iter().all(|r| g.contains_relation(&RelationId::new(*r)));
    let nonempty_ok = match result {
        Some(EvalResult::Boolean(_)) | Some(EvalResult::Integer(_)) => true,
        Some(r) => r.is_nonempty(),
        None => false,
    };
    let cause = if !syntactic_ok {
        Some(FailureCause::StructuralInvalidity)
    } else if !alignment_ok {
        Some(FailureCause::LinkingFailure)
    } else if !nonempty_ok {
        Some(FailureCause::EmptyResult)
    } else {
        None
    };
    ValidationVerdict {
        syntactic_ok,
        alignment_ok,
        nonempty_ok,
        cause,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    pub draft: String,
    pub calibration: Option<Calibration>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub rung: String,
    pub template: Option<String>,
    pub sexpr: Option<SExpr>,
    pub verdict: ValidationVerdict,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub question: String,
    pub resolved_question: String,
    pub ablations: Ablations,
    pub drafts: Vec<String>,
    pub calibrations: Vec<CalibrationTrace>,
    pub probes: usize,
    pub predicted_type: Option<QuestionType>,
    pub refined_type: Option<QuestionType>,
    pub candidate_templates: Vec<String>,
    pub template_id: Option<String>,
    pub template_body: Option<String>,
    pub plan: Option<ReplacementPlan>,
    pub sexpr: Option<SExpr>,
    pub sparql: Option<String>,
    pub result: Option<EvalResult>,
    pub verdict: Option<ValidationVerdict>,
    pub attempts: Vec<Attempt>,
    pub retries: usize,
    pub memory_written: bool,
    pub failure: Option<String>,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnOutcome {
    pub result: Option<EvalResult>,
    pub trace: TurnTrace,
}

pub const FULL_FORM_INSTRUCTION: &str = "Write one complete S-expression answering the question. \
Reply with a fenced block containing that expression.";

/// Shared, read-only dependencies of the pipeline.
pub struct Pipeline<'a> {
    pub kg: &'a KnowledgeGraph,
    pub linker: &'a Linker<'a>,
    pub llm: &'a dyn LlmGateway,
    pub config: &'a AgentConfig,
}

struct Candidate {
    label: &'static str,
    template: Template,
    plan: ReplacementPlan,
}

struct Executed {
    sexpr: SExpr,
    sparql: Option<String>,
    result: Option<EvalResult>,
    verdict: ValidationVerdict,
}

/// Fills a template's placeholders from cores in order, keeping constants
/// and functions from an earlier plan where possible.
fn heuristic_plan(t: &Template, cores: &[SExpr], prior: Option<&ReplacementPlan>) -> Option<ReplacementPlan> {
    let mut plan = ReplacementPlan::default();
    let mut next = cores.iter();
    for p in t.body.placeholders() {
        match p.as_str() {
            "number" => {
                let v = prior.and_then(|pl| pl.constants.get("number").copied()).unwrap_or(1);
                plan.constants.insert(p, v);
            }
            "compare" | "optimize" => {
                let f = prior
                    .and_then(|pl| pl.functions.get(&p).copied())
                    .unwrap_or(if p == "compare" {
                        crate::sexpr::Function::Ge
                    } else {
                        crate::sexpr::Function::ArgMax
                    });
                plan.functions.insert(p, f);
            }
            _ => {
                plan.variables.insert(p, next.next()?.clone());
            }
        }
    }
    next.next().is_none().then_some(plan)
}

impl Pipeline<'_> {
    fn execute(&self, e: &SExpr) -> Executed {
        let mut sparql = None;
        let result = match to_sparql(e) {
            Ok(q) => {
                sparql = Some(q.render());
                execute_sparql(&q, self.kg).ok()
            }
            Err(_) => eval(e, self.kg).ok(),
        };
        let verdict = validate(e, self.kg, result.as_ref());
        Executed {
            sexpr: e.clone(),
            sparql,
            result,
            verdict,
        }
    }

    fn calibrate_drafts(&self, drafts: &[String], trace: &mut TurnTrace) -> Vec<Vec<CalibratedCore>> {
        let cfg = self.config.calibration();
        let mut cores = Vec::new();
        for d in drafts {
            let res = if self.config.ablations.no_calibration {
                identity_calibration(d, self.kg)
            } else {
                calibrate_with(d, self.kg, self.linker, cfg)
            };
            match res {
                Ok(c) => {
                    trace.probes += c.probes;
                    if !c.variants.is_empty() {
                        cores.push(c.variants.clone());
                    }
                    trace.calibrations.push(CalibrationTrace {
                        draft: d.clone(),
                        calibration: Some(c),
                        error: None,
                    });
                }
                Err(e) => trace.calibrations.push(CalibrationTrace {
                    draft: d.clone(),
                    calibration: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        cores
    }

    fn type_exemplars(&self, mem: &GlobalMemory, question: &str) -> Vec<Exemplar> {
        let mut out = Vec::new();
        for t in QuestionType::ALL {
            for r in mem.retrieve_exemplars(t, question, llm::TYPE_EXEMPLARS_PER_TYPE) {
                out.push(Exemplar {
                    input: r.pattern.clone(),
                    output: t.to_string(),
                });
            }
        }
        out
    }

    fn plan_exemplars(
        &self,
        mem: &GlobalMemory,
        qtype: QuestionType,
        question: &str,
        templates: &[Template],
    ) -> Vec<Exemplar> {
        let mut per_template: BTreeMap<&str, usize> = BTreeMap::new();
        let mut out = Vec::new();
        let pool = mem.retrieve_exemplars(
            qtype,
            question,
            llm::PLAN_EXEMPLARS_PER_TEMPLATE * templates.len().max(1),
        );
        for r in pool {
            let n = per_template.entry(r.template_id.as_str()).or_default();
            if *n < llm::PLAN_EXEMPLARS_PER_TEMPLATE {
                *n += 1;
                out.push(Exemplar {
                    input: r.pattern.clone(),
                    output: r.sexpr.to_string(),
                });
            }
        }
        out
    }

    /// Answers one turn and updates the dialog state and, on verified
    /// success, the global memory.
    pub fn answer_turn(&self, state: &mut DialogState, memory: &mut GlobalMemory, question: &str) -> TurnOutcome {
        let ab = self.config.ablations;
        let empty = GlobalMemory::new();
        let mem_view: &GlobalMemory = if ab.no_memory { &empty } else { memory };
        let mut trace = TurnTrace {
            question: question.to_string(),
            ablations: ab,
            ..TurnTrace::default()
        };
        let resolved = resolve_question(state, question, self.llm, self.kg);
        trace.resolved_question = resolved.clone();

        let accepted = if ab.no_core_extraction {
            self.full_form(&resolved, &mut trace)
        } else {
            self.composed(&resolved, mem_view, &mut trace)
        };

        if let Some((exec, template_id, link_score)) = accepted {
            trace.sexpr = Some(exec.sexpr.clone());
            trace.sparql = exec.sparql.clone();
            trace.result = exec.result.clone();
            trace.verdict = Some(exec.verdict);
            if exec.verdict.passed() && !ab.no_memory && link_score >= self.config.min_link_score {
                let qtype = trace.refined_type.unwrap_or(QuestionType::Simple);
                let surfaces = entity_surfaces(&exec.sexpr, self.kg);
                match memory.record_success(qtype, &resolved, &surfaces, &exec.sexpr, &template_id, &exec.verdict) {
                    Ok(added) => trace.memory_written = added,
                    Err(e) => trace.errors.push(e.to_string()),
                }
            }
            if !exec.verdict.passed() {
                trace.failure = exec.verdict.cause.map(|c| c.to_string());
            }
        } else if trace.failure.is_none() {
            trace.failure = Some(FailureCause::StructuralInvalidity.to_string());
        }

        let result = trace.result.clone().filter(|_| trace.failure.is_none());
        state.record(
            DialogTurn {
                question: question.to_string(),
                answer: result
                    .as_ref()
                    .map(EvalResult::render)
                    .unwrap_or_else(|| "<no answer>".into()),
                resolved_question: resolved,
                logical_form: trace.sexpr.clone(),
                answer_entities: Vec::new(),
            },
            result.as_ref(),
            self.kg,
        );
        TurnOutcome { result, trace }
    }

    fn full_form(&self, resolved: &str, trace: &mut TurnTrace) -> Option<(Executed, String, f64)> {
        let drafts = match llm::draft_cores_with(resolved, FULL_FORM_INSTRUCTION, &[], self.llm) {
            Ok(d) => d,
            Err(e) => {
                trace.errors.push(e.to_string());
                return None;
            }
        };
        trace.drafts = drafts.clone();
        let e = match parse(&drafts[0]) {
            Ok(e) => e,
            Err(err) => {
                trace.errors.push(err.to_string());
                trace.failure = Some(FailureCause::StructuralInvalidity.to_string());
                return None;
            }
        };
        trace.probes += 1;
        let exec = self.execute(&e);
        trace.attempts.push(Attempt {
            rung: "initial".into(),
            template: None,
            sexpr: Some(e),
            verdict: exec.verdict,
            note: Some("full form drafted directly".into()),
        });
        Some((exec, "direct".into(), 1.0))
    }

    fn composed(&self, resolved: &str, mem: &GlobalMemory, trace: &mut TurnTrace) -> Option<(Executed, String, f64)> {
        let mut redrafted = false;
        let mut payload = resolved.to_string();
        let mut last: Option<(Executed, String, f64)> = None;
        loop {
            let drafts = match llm::draft_cores(&payload, &[], self.llm) {
                Ok(d) => d,
                Err(e) => {
                    trace.errors.push(e.to_string());
                    return last;
                }
            };
            trace.drafts = drafts.clone();
            let variants = self.calibrate_drafts(&drafts, trace);
            if variants.is_empty() {
                trace.failure = Some(FailureCause::LinkingFailure.to_string());
                return last;
            }
            let predicted = llm::predict_type(resolved, &self.type_exemplars(mem, resolved), self.llm)
                .map_err(|e| trace.errors.push(e.to_string()))
                .unwrap_or(QuestionType::Simple);
            let refined = refine_type(predicted, resolved);
            trace.predicted_type = Some(predicted);
            trace.refined_type = Some(refined);
            let templates = candidate_templates(refined, mem);
            trace.candidate_templates = templates.iter().map(|t| t.id.clone()).collect();
            let firsts: Vec<CalibratedCore> = variants.iter().map(|v| v[0].clone()).collect();
            let exemplars = self.plan_exemplars(mem, refined, resolved, &templates);

            let mut queue: Vec<Candidate> = Vec::new();
            let mut prior_plan = None;
            match llm::select_plan(resolved, refined, &templates, &firsts, &exemplars, self.llm) {
                Ok(PlanChoice { template, plan }) => {
                    prior_plan = Some(plan.clone());
                    // rung 1: the same plan over later calibrated variants
                    let depth = variants.iter().map(Vec::len).max().unwrap_or(1);
                    for i in 0..depth {
                        let mut p = plan.clone();
                        for v in p.variables.values_mut() {
                            if let Some(alts) = variants.iter().find(|alts| alts[0].expr == *v) {
                                *v = alts[i.min(alts.len() - 1)].expr.clone();
                            }
                        }
                        if i > 0 && p == plan {
                            continue;
                        }
                        queue.push(Candidate {
                            label: if i == 0 { "initial" } else { "next_variant" },
                            template: template.clone(),
                            plan: p,
                        });
                    }
                    trace.template_id = Some(template.id.clone());
                    trace.template_body = Some(template.body.to_string());
                    trace.plan = Some(plan);
                }
                Err(e) => trace.errors.push(e.to_string()),
            }
            // rung 2: remaining candidate templates filled in order
            let core_exprs: Vec<SExpr> = firsts.iter().map(|c| c.expr.clone()).collect();
            for t in &templates {
                if queue.iter().any(|c| c.template.body == t.body) {
                    continue;
                }
                if let Some(p) = heuristic_plan(t, &core_exprs, prior_plan.as_ref()) {
                    queue.push(Candidate {
                        label: "next_template",
                        template: t.clone(),
                        plan: p,
                    });
                }
            }

            let mut cause = FailureCause::StructuralInvalidity;
            for cand in queue {
                let is_retry = !(cand.label == "initial" && trace.attempts.is_empty());
                if is_retry {
                    if trace.retries >= self.config.max_retries {
                        return last;
                    }
                    trace.retries += 1;
                }
                let e = match transform(&cand.template, &cand.plan) {
                    Ok(e) => e,
                    Err(err) => {
                        trace.attempts.push(Attempt {
                            rung: cand.label.into(),
                            template: Some(cand.template.id.clone()),
                            sexpr: None,
                            verdict: ValidationVerdict::failed(FailureCause::StructuralInvalidity),
                            note: Some(err.to_string()),
                        });
                        continue;
                    }
                };
                let exec = self.execute(&e);
                let link_score = cand
                    .plan
                    .variables
                    .values()
                    .filter_map(|v| variants.iter().flatten().find(|c| c.expr == *v))
                    .map(CalibratedCore::min_link_score)
                    .fold(1.0, f64::min);
                trace.attempts.push(Attempt {
                    rung: cand.label.into(),
                    template: Some(cand.template.id.clone()),
                    sexpr: Some(e),
                    verdict: exec.verdict,
                    note: None,
                });
                if let Some(c) = exec.verdict.cause {
                    cause = c;
                }
                trace.template_id = Some(cand.template.id.clone());
                trace.template_body = Some(cand.template.body.to_string());
                trace.plan = Some(cand.plan.clone());
                let passed = exec.verdict.passed();
                last = Some((exec, cand.template.id.clone(), link_score));
                if passed {
                    return last;
                }
            }
            // rung 3: one re-draft with the failure cause appended
            if redrafted || trace.retries >= self.config.max_retries {
                return last;
            }
            redrafted = true;
            trace.retries += 1;
            payload = format!("{resolved}\n% previous attempt failed: {cause}");
            trace.attempts.push(Attempt {
                rung: "redraft".into(),
                template: None,
                sexpr: None,
                verdict: ValidationVerdict::failed(cause),
                note: Some(format!("re-drafting cores after {cause}")),
            });
        }
    }
}
