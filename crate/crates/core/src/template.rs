//! Question types, the builtin template library, type refinement and
//! placeholder substitution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::GlobalMemory;
use crate::sexpr::{is_core, parse_template, type_check, Function, Head, SExpr, TypeError, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Simple,
    Verify,
    Count,
    Compare,
    CompareAndCount,
    Optimize,
}

impl QuestionType {
    pub const ALL: [QuestionType; 6] = [
        QuestionType::Simple,
        QuestionType::Verify,
        QuestionType::Count,
        QuestionType::Compare,
        QuestionType::CompareAndCount,
        QuestionType::Optimize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Simple => "simple",
            QuestionType::Verify => "verify",
            QuestionType::Count => "count",
            QuestionType::Compare => "compare",
            QuestionType::CompareAndCount => "compare_and_count",
            QuestionType::Optimize => "optimize",
        }
    }

    /// Entity-set answers are scored by F1, the rest by accuracy.
    pub fn scored_by_f1(self) -> bool {
        matches!(
            self,
            QuestionType::Simple | QuestionType::Compare | QuestionType::Optimize
        )
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown question type `{0}`")]
pub struct UnknownQuestionType(pub String);

impl FromStr for QuestionType {
    type Err = UnknownQuestionType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_lowercase();
        QuestionType::ALL
            .into_iter()
            .find(|t| t.name() == wanted)
            .ok_or_else(|| UnknownQuestionType(s.trim().to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    Builtin,
    Learned,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    #[serde(with = "body_text")]
    pub body: SExpr,
    pub source: TemplateSource,
}

mod body_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::sexpr::{parse_template, SExpr};

    pub fn serialize<S: Serializer>(e: &SExpr, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&e.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SExpr, D::Error> {
        let s = String::deserialize(d)?;
        parse_template(&s).map_err(serde::de::Error::custom)
    }
}

const LIBRARY: &[(QuestionType, &[&str])] = &[
    (
        QuestionType::Simple,
        &[
            "x1",
            "(OR x1 x2)",
            "(DISTINCT x1)",
            "(DIFF x1 x2)",
            "(GROUP_COUNT x1)",
            "(GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2))",
        ],
    ),
    (QuestionType::Verify, &["(ALL x1)", "(ALL x1 x2)", "(ALL x1 x2 x3)"]),
    (
        QuestionType::Count,
        &[
            "(COUNT x1)",
            "(COUNT (DISTINCT x1))",
            "(COUNT (DISTINCT (OR x1 x2)))",
            "(COUNT (GROUP_COUNT x1))",
            "(COUNT (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)))",
        ],
    ),
    (
        QuestionType::Compare,
        &[
            "(compare (GROUP_COUNT x1) number)",
            "(compare (GROUP_COUNT x1) x2)",
            "(compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) number)",
            "(compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) (OR x3 x4))",
        ],
    ),
    (
        QuestionType::CompareAndCount,
        &[
            "(COUNT (compare (GROUP_COUNT x1) number))",
            "(COUNT (compare (GROUP_COUNT x1) x2))",
            "(COUNT (compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) number))",
            "(COUNT (compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) (OR x3 x4)))",
        ],
    ),
    (
        QuestionType::Optimize,
        &[
            "(optimize (GROUP_COUNT x1))",
            "(optimize (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)))",
        ],
    ),
];

/// Every builtin template, in library order.
pub fn builtin_library() -> &'static [Template] {
    static LIB: OnceLock<Vec<Template>> = OnceLock::new();
    LIB.get_or_init(|| {
        let mut out = Vec::new();
        for (qtype, bodies) in LIBRARY {
            for (i, body) in bodies.iter().enumerate() {
                out.push(Template {
                    id: format!("{qtype}/{}", i + 1),
                    qtype: *qtype,
                    body: parse_template(body).expect("builtin template parses"),
                    source: TemplateSource::Builtin,
                });
            }
        }
        out
    })
}

pub fn template_by_id(id: &str) -> Option<&'static Template> {
    builtin_library().iter().find(|t| t.id == id)
}

/// Keyword refinement of a predicted question type. Superlatives win;
/// "at least" and "at most" are comparatives, not superlatives.
pub fn refine_type(predicted: QuestionType, question: &str) -> QuestionType {
    let q = question.to_lowercase();
    let words: Vec<String> = q
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect();
    let superlative = words.iter().enumerate().any(|(i, w)| {
        let after_at = i > 0 && words[i - 1] == "at";
        match w.as_str() {
            "most" | "least" => !after_at,
            "max" | "min" => true,
            _ => false,
        }
    });
    let count_cue = q.contains("how many") || q.contains("number of");
    let comparative = ["more than", "less than", "at least", "at most", "exactly"]
        .iter()
        .any(|c| q.contains(c));
    if superlative {
        return QuestionType::Optimize;
    }
    match predicted {
        QuestionType::Compare if count_cue => QuestionType::CompareAndCount,
        QuestionType::Count if comparative && count_cue => QuestionType::CompareAndCount,
        t => t,
    }
}

/// Builtins of type `t` followed by learned templates of that type whose
/// bodies are new.
pub fn candidate_templates(t: QuestionType, mem: &GlobalMemory) -> Vec<Template> {
    let mut out: Vec<Template> = builtin_library().iter().filter(|x| x.qtype == t).cloned().collect();
    let mut seen: BTreeSet<String> = out.iter().map(|x| x.body.to_string()).collect();
    for learned in mem.learned_templates(t) {
        if seen.insert(learned.body.to_string()) {
            out.push(learned);
        }
    }
    out
}

/// Placeholder assignment for a template, split the way plans are
/// exchanged: cores, integer constants and function names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    #[serde(default)]
    pub variables: BTreeMap<String, SExpr>,
    #[serde(default)]
    pub constants: BTreeMap<String, u64>,
    #[serde(default)]
    pub functions: BTreeMap<String, Function>,
}

impl ReplacementPlan {
    pub fn keys(&self) -> BTreeSet<String> {
        self.variables
            .keys()
            .chain(self.constants.keys())
            .chain(self.functions.keys())
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("plan does not fit template: missing {missing:?}, extra {extra:?}")]
    Plan { missing: Vec<String>, extra: Vec<String> },
    #[error("placeholder `{0}` assigned in the wrong category")]
    Category(String),
    #[error("`{function}` cannot fill `{slot}`")]
    Function { slot: String, function: Function },
    #[error("composed expression is ill-typed: {0}")]
    Composition(TypeError),
}

fn slot_accepts(slot: &str, f: Function) -> bool {
    match slot {
        "compare" => f.is_comparison(),
        "optimize" => f.is_extremum(),
        _ => false,
    }
}

fn substitute(n: &SExpr, plan: &ReplacementPlan) -> SExpr {
    match n {
        SExpr::Placeholder(p) => match plan.constants.get(p) {
            Some(v) => SExpr::Number(*v),
            None => plan.variables[p].clone(),
        },
        SExpr::Call { head, args } => {
            let head = match head {
                Head::Slot(s) => Head::Func(plan.functions[s]),
                h => h.clone(),
            };
            SExpr::Call {
                head,
                args: args.iter().map(|a| substitute(a, plan)).collect(),
            }
        }
        leaf => leaf.clone(),
    }
}

/// Recursively replaces every placeholder of `t` using `plan`.
pub fn transform(t: &Template, plan: &ReplacementPlan) -> Result<SExpr, TemplateError> {
    let wanted: BTreeSet<String> = t.body.placeholders().into_iter().collect();
    let given = plan.keys();
    if wanted != given {
        return Err(TemplateError::Plan {
            missing: wanted.difference(&given).cloned().collect(),
            extra: given.difference(&wanted).cloned().collect(),
        });
    }
    for k in plan.constants.keys() {
        if k != "number" {
            return Err(TemplateError::Category(k.clone()));
        }
    }
    for (k, f) in &plan.functions {
        if !matches!(k.as_str(), "compare" | "optimize") {
            return Err(TemplateError::Category(k.clone()));
        }
        if !slot_accepts(k, *f) {
            return Err(TemplateError::Function {
                slot: k.clone(),
                function: *f,
            });
        }
    }
    for k in plan.variables.keys() {
        if matches!(k.as_str(), "number" | "compare" | "optimize") {
            return Err(TemplateError::Category(k.clone()));
        }
    }
    let out = substitute(&t.body, plan);
    type_check(&out).map_err(TemplateError::Composition)?;
    Ok(out)
}

/// A plan with type-correct stand-ins for every placeholder of `body`:
/// Boolean cores under ALL, entity-set cores elsewhere.
pub fn canonical_plan(body: &SExpr) -> ReplacementPlan {
    fn visit(n: &SExpr, parent: Option<Function>, plan: &mut ReplacementPlan) {
        match n {
            SExpr::Placeholder(p) if p == "number" => {
                plan.constants.insert(p.clone(), 1);
            }
            SExpr::Placeholder(p) => {
                let core = if parent == Some(Function::All) {
                    SExpr::call(
                        Function::IsTrue,
                        vec![SExpr::entity("a"), SExpr::relation("p"), SExpr::entity("b")],
                    )
                } else {
                    SExpr::join(SExpr::relation("p"), SExpr::entity("b"))
                };
                plan.variables.insert(p.clone(), core);
            }
            SExpr::Call { head, args } => {
                if let Head::Slot(s) = head {
                    let f = if s == "optimize" {
                        Function::ArgMax
                    } else {
                        Function::Ge
                    };
                    plan.functions.insert(s.clone(), f);
                }
                let f = n.function();
                for a in args {
                    visit(a, f, plan);
                }
            }
            _ => {}
        }
    }
    let mut plan = ReplacementPlan::default();
    visit(body, None, &mut plan);
    plan
}

/// Turns a composed expression back into a template body: maximal core
/// subtrees become `x1`, `x2`, ..., numbers become `number`, comparison
/// and extremum heads become `compare` / `optimize`.
pub fn abstract_template(e: &SExpr) -> SExpr {
    decompose(e).0
}

/// Splits a composed expression into a template body and the plan that
/// rebuilds it; the inverse of [`transform`] when the expression holds at
/// most one number.
pub fn decompose(e: &SExpr) -> (SExpr, ReplacementPlan) {
    fn go(n: &SExpr, plan: &mut ReplacementPlan) -> SExpr {
        let core_like = is_core(n)
            && matches!(type_check(n), Ok(ValueType::EntitySet) | Ok(ValueType::Boolean))
            && !matches!(n, SExpr::Number(_));
        if core_like {
            let name = format!("x{}", plan.variables.len() + 1);
            plan.variables.insert(name.clone(), n.clone());
            return SExpr::Placeholder(name);
        }
        match n {
            SExpr::Number(v) => {
                plan.constants.entry("number".into()).or_insert(*v);
                SExpr::Placeholder("number".into())
            }
            SExpr::Call { head, args } => {
                let head = match n.function() {
                    Some(f) if f.is_comparison() => {
                        plan.functions.entry("compare".into()).or_insert(f);
                        Head::Slot("compare".into())
                    }
                    Some(f) if f.is_extremum() => {
                        plan.functions.entry("optimize".into()).or_insert(f);
                        Head::Slot("optimize".into())
                    }
                    _ => head.clone(),
                };
                SExpr::Call {
                    head,
                    args: args.iter().map(|a| go(a, plan)).collect(),
                }
            }
            leaf => leaf.clone(),
        }
    }
    let mut plan = ReplacementPlan::default();
    let body = go(e, &mut plan);
    (body, plan)
}

/// Left-nested OR over three or more cores when the question reads as a
/// disjunction.
pub fn compose_out_of_template(cores: &[SExpr], question: &str) -> Option<SExpr> {
    if cores.len() < 3 {
        return None;
    }
    let q = format!(" {} ", question.to_lowercase());
    let disjunctive = q.contains(" or ") || q.contains(" either ") || q.contains(" any of ");
    if !disjunctive {
        return None;
    }
    let mut it = cores.iter().cloned();
    let first = it.next()?;
    Some(it.fold(first, |acc, c| SExpr::call(Function::Or, vec![acc, c])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;

    const TERRITORY_BODY: &str = "(COUNT (compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) number))";
    const APPLICATION_CORE: &str = "(AND (JOIN (R narrative_location) (JOIN instance_of application)) (JOIN instance_of administrative_territorial_entity))";
    const WORK_OF_ART_CORE: &str = "(AND (JOIN (R narrative_location) (JOIN instance_of work_of_art)) (JOIN instance_of administrative_territorial_entity))";

    #[test]
    fn library_has_grouped_sum_count() {
        assert!(builtin_library()
            .iter()
            .any(|t| t.body.to_string() == TERRITORY_BODY && t.qtype == QuestionType::CompareAndCount));
        let verify = builtin_library()
            .iter()
            .filter(|t| t.qtype == QuestionType::Verify)
            .count();
        assert!(verify >= 3);
    }

    #[test]
    fn every_builtin_type_checks_under_canonical_plan() {
        for t in builtin_library() {
            let e = transform(t, &canonical_plan(&t.body)).unwrap_or_else(|err| panic!("{}: {err}", t.id));
            assert!(e.placeholders().is_empty());
        }
    }

    #[test]
    fn territory_plan() {
        let t = builtin_library()
            .iter()
            .find(|t| t.body.to_string() == TERRITORY_BODY)
            .unwrap();
        let plan: ReplacementPlan = serde_json::from_value(serde_json::json!({
            "variables": { "x2": WORK_OF_ART_CORE, "x1": APPLICATION_CORE },
            "constants": { "number": 840 },
            "functions": { "compare": "GE" }
        }))
        .unwrap();
        let e = transform(t, &plan).unwrap();
        assert_eq!(
            e.to_string(),
            format!("(COUNT (GE (GROUP_SUM (GROUP_COUNT {APPLICATION_CORE}) (GROUP_COUNT {WORK_OF_ART_CORE})) 840))")
        );
    }

    #[test]
    fn plan_mismatch_is_listed() {
        let t = template_by_id("simple/2").unwrap();
        let mut plan = ReplacementPlan::default();
        plan.variables.insert("x1".into(), parse("a").unwrap());
        plan.variables.insert("x3".into(), parse("b").unwrap());
        assert_eq!(
            transform(t, &plan),
            Err(TemplateError::Plan {
                missing: vec!["x2".into()],
                extra: vec!["x3".into()]
            })
        );
    }

    #[test]
    fn identity_template() {
        let t = template_by_id("simple/1").unwrap();
        let mut plan = ReplacementPlan::default();
        plan.variables.insert("x1".into(), parse(APPLICATION_CORE).unwrap());
        assert_eq!(transform(t, &plan).unwrap().to_string(), APPLICATION_CORE);
    }

    #[test]
    fn wrong_function_kind() {
        let t = template_by_id("optimize/1").unwrap();
        let mut plan = canonical_plan(&t.body);
        plan.functions.insert("optimize".into(), Function::Ge);
        assert!(matches!(transform(t, &plan), Err(TemplateError::Function { .. })));
    }

    #[test]
    fn refinement_rules() {
        let q = "How many administrative territories are the narrative locations of at least 840 applications or works of art?";
        assert_eq!(refine_type(QuestionType::Compare, q), QuestionType::CompareAndCount);
        assert_eq!(refine_type(QuestionType::Count, q), QuestionType::CompareAndCount);
        assert_eq!(
            refine_type(
                QuestionType::Simple,
                "Who are the children of Ludovico II, Marquess of Saluzzo?"
            ),
            QuestionType::Simple
        );
        assert_eq!(
            refine_type(QuestionType::Simple, "Which river crosses the most countries?"),
            QuestionType::Optimize
        );
        assert_eq!(
            refine_type(QuestionType::Count, "How many rivers are there?"),
            QuestionType::Count
        );
    }

    #[test]
    fn three_way_or_composition() {
        let cores: Vec<SExpr> = [
            "assistant_coach",
            "association_football_manager",
            "association_football_player",
        ]
        .iter()
        .map(|o| {
            parse(&format!(
                "(AND (JOIN (R field_of_this_occupation) {o}) (JOIN instance_of sport))"
            ))
            .unwrap()
        })
        .collect();
        let q = "Which sports are the fields of assistant coach, association football manager or association football player?";
        let e = compose_out_of_template(&cores, q).unwrap();
        assert_eq!(abstract_template(&e).to_string(), "(OR (OR x1 x2) x3)");
        assert_eq!(compose_out_of_template(&cores[..2], q), None);
        let mut four = cores.clone();
        four.push(parse("x").unwrap());
        let e = compose_out_of_template(&four, q).unwrap();
        assert_eq!(abstract_template(&e).to_string(), "(OR (OR (OR x1 x2) x3) x4)");
    }

    #[test]
    fn abstraction_inverts_builtins() {
        for t in builtin_library() {
            let e = transform(t, &canonical_plan(&t.body)).unwrap();
            assert_eq!(abstract_template(&e), t.body, "{}", t.id);
        }
    }

    #[test]
    fn decompose_then_transform() {
        let e = parse(&format!(
            "(COUNT (GE (GROUP_SUM (GROUP_COUNT {APPLICATION_CORE}) (GROUP_COUNT {WORK_OF_ART_CORE})) 840))"
        ))
        .unwrap();
        let (body, plan) = decompose(&e);
        assert_eq!(body.to_string(), TERRITORY_BODY);
        assert_eq!(plan.constants["number"], 840);
        let t = template_by_id("compare_and_count/3").unwrap();
        assert_eq!(transform(t, &plan).unwrap(), e);
    }

    #[test]
    fn catalog_json_round_trip() {
        let json = serde_json::to_string(builtin_library()).unwrap();
        let back: Vec<Template> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, builtin_library());
    }
}
