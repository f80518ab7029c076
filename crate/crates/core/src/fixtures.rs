//! Bundled demonstration graphs with matching scripted gateways.

use crate::calibrate::CalibratedCore;
use crate::eval::eval;
use crate::kg::{KnowledgeGraph, LabelKind, Triple};
use crate::llm::{fence, plan_payload, PromptBundle, ScriptedGateway, TaskTag, PLAN_INSTRUCTION};
use crate::memory::{DialogState, DialogTurn};
use crate::sexpr::parse;
use crate::template::{builtin_library, QuestionType};

pub const FIXTURE_NAMES: [&str; 2] = ["family", "count-territories"];

pub const LUDOVICO: &str = "Ludovico_II,_Marquess_of_Saluzzo";
pub const SONS: [&str; 4] = [
    "Francesco_of_Saluzzo",
    "Gian_Gabriele_I_of_Saluzzo",
    "Giovanni_Ludovico_of_Saluzzo",
    "Michele_Antonio_of_Saluzzo",
];
const DAUGHTERS: [&str; 2] = ["Carlotta_of_Saluzzo", "Margherita_of_Saluzzo"];

pub const FAMILY_TURNS: [&str; 3] = [
    "Who are the children of Ludovico II, Marquess of Saluzzo?",
    "Who are siblings of that one?",
    "No, I meant Giovanni Ludovico.",
];
const FAMILY_RESOLVED: [&str; 3] = [
    FAMILY_TURNS[0],
    "Who are siblings of Francesco?",
    "Who are siblings of Giovanni Ludovico?",
];
const FAMILY_CORES: [&str; 3] = [
    "(AND (JOIN (R child) Ludovico_II,_Marquess_of_Saluzzo) (JOIN instance_of male_person))",
    "(AND (JOIN (R sibling) Francesco_of_Saluzzo) (JOIN instance_of male_person))",
    "(AND (JOIN (R sibling) Giovanni_Ludovico_of_Saluzzo) (JOIN instance_of male_person))",
];

pub fn family_graph() -> KnowledgeGraph {
    let mut triples = vec![
        Triple::new(LUDOVICO, "instance_of", "male_person"),
        Triple::new("Thomas_III_of_Saluzzo", "child", LUDOVICO),
        Triple::new("Thomas_III_of_Saluzzo", "instance_of", "male_person"),
        Triple::new(LUDOVICO, "father", "Thomas_III_of_Saluzzo"),
    ];
    let children: Vec<&str> = SONS.iter().chain(&DAUGHTERS).copied().collect();
    for c in &children {
        triples.push(Triple::new(LUDOVICO, "child", c));
        triples.push(Triple::new(c, "father", LUDOVICO));
        for d in &children {
            if c != d {
                triples.push(Triple::new(c, "sibling", d));
            }
        }
    }
    for s in SONS {
        triples.push(Triple::new(s, "instance_of", "male_person"));
    }
    for d in DAUGHTERS {
        triples.push(Triple::new(d, "instance_of", "female_person"));
    }
    let labels = [
        (LUDOVICO, LabelKind::Entity, "Ludovico II, Marquess of Saluzzo"),
        ("Thomas_III_of_Saluzzo", LabelKind::Entity, "Thomas III of Saluzzo"),
        ("Francesco_of_Saluzzo", LabelKind::Entity, "Francesco"),
        ("Gian_Gabriele_I_of_Saluzzo", LabelKind::Entity, "Gian Gabriele I"),
        ("Giovanni_Ludovico_of_Saluzzo", LabelKind::Entity, "Giovanni Ludovico"),
        ("Michele_Antonio_of_Saluzzo", LabelKind::Entity, "Michele Antonio"),
        ("Carlotta_of_Saluzzo", LabelKind::Entity, "Carlotta"),
        ("Margherita_of_Saluzzo", LabelKind::Entity, "Margherita"),
        ("male_person", LabelKind::Entity, "male person"),
        ("female_person", LabelKind::Entity, "female person"),
        ("child", LabelKind::Relation, "child"),
        ("father", LabelKind::Relation, "father"),
        ("sibling", LabelKind::Relation, "sibling"),
        ("instance_of", LabelKind::Relation, "instance of"),
    ];
    KnowledgeGraph::from_parts(triples, labels).expect("family fixture is well formed")
}

fn exact_core(text: &str) -> CalibratedCore {
    CalibratedCore {
        expr: parse(text).expect("fixture core parses"),
        provenance: Vec::new(),
        nonempty: true,
        score: 1.0,
    }
}

fn plan_for(
    question: &str,
    qtype: QuestionType,
    template: &str,
    cores: &[&str],
    extra: serde_json::Value,
) -> (String, String) {
    let templates: Vec<_> = builtin_library().iter().filter(|t| t.qtype == qtype).cloned().collect();
    let calibrated: Vec<CalibratedCore> = cores.iter().map(|c| exact_core(c)).collect();
    let mut doc = serde_json::json!({ "template": template, "variables": {} });
    for (i, c) in cores.iter().enumerate() {
        doc["variables"][format!("x{}", i + 1)] = serde_json::Value::String(c.to_string());
    }
    if let serde_json::Value::Object(m) = extra {
        for (k, v) in m {
            doc[k] = v;
        }
    }
    (
        plan_payload(question, qtype, &templates, &calibrated),
        fence(&doc.to_string()),
    )
}

/// Gateway scripted for the three-turn family dialog, including the
/// coreference requests, whose payloads depend on the earlier answers.
pub fn family_gateway(g: &KnowledgeGraph) -> ScriptedGateway {
    let mut gw = ScriptedGateway::new();
    let mut state = DialogState::new();
    for i in 0..FAMILY_TURNS.len() {
        let (q, resolved, core) = (FAMILY_TURNS[i], FAMILY_RESOLVED[i], FAMILY_CORES[i]);
        if i > 0 {
            gw.insert(TaskTag::Coref, &state.coref_payload(q, g), fence(resolved));
        }
        gw.insert(TaskTag::CoreGen, resolved, fence(core));
        gw.insert(TaskTag::TypePred, resolved, fence("simple"));
        let (payload, resp) = plan_for(resolved, QuestionType::Simple, "x1", &[core], serde_json::json!({}));
        gw.insert(TaskTag::PlanGen, &payload, resp);
        let expr = parse(core).expect("fixture core parses");
        let answer = eval(&expr, g).expect("fixture core evaluates");
        state.record(
            DialogTurn {
                question: q.into(),
                answer: answer.render(),
                resolved_question: resolved.into(),
                logical_form: Some(expr),
                answer_entities: Vec::new(),
            },
            Some(&answer),
            g,
        );
    }
    gw
}

pub const TERRITORY_QUESTION: &str =
    "How many administrative territories are the narrative locations of at least 840 applications or works of art?";
pub const APPLICATION_CORE: &str = "(AND (JOIN (R narrative_location) (JOIN instance_of application)) (JOIN instance_of administrative_territorial_entity))";
pub const WORK_OF_ART_CORE: &str = "(AND (JOIN (R narrative_location) (JOIN instance_of work_of_art)) (JOIN instance_of administrative_territorial_entity))";
pub const TERRITORY_TEMPLATE: &str = "(COUNT (compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) number))";

/// Territories with (applications, works of art) set in them; `harbor_city`
/// is not a territory. Territories `north` and `delta` reach 840.
const TERRITORY_COUNTS: [(&str, bool, usize, usize); 5] = [
    ("north_province", true, 500, 340),
    ("south_province", true, 400, 439),
    ("delta_region", true, 100, 900),
    ("east_march", true, 0, 0),
    ("harbor_city", false, 0, 900),
];

pub fn territory_graph() -> KnowledgeGraph {
    let mut triples = Vec::new();
    let (mut apps, mut works) = (0, 0);
    for (place, is_territory, n_apps, n_works) in TERRITORY_COUNTS {
        if is_territory {
            triples.push(Triple::new(place, "instance_of", "administrative_territorial_entity"));
        } else {
            triples.push(Triple::new(place, "instance_of", "city"));
        }
        for _ in 0..n_apps {
            apps += 1;
            let id = format!("application_{apps}");
            triples.push(Triple::new(&id, "instance_of", "application"));
            triples.push(Triple::new(&id, "narrative_location", place));
        }
        for _ in 0..n_works {
            works += 1;
            let id = format!("work_of_art_{works}");
            triples.push(Triple::new(&id, "instance_of", "work_of_art"));
            triples.push(Triple::new(&id, "narrative_location", place));
        }
    }
    let labels = [
        (
            "administrative_territorial_entity",
            LabelKind::Entity,
            "administrative territorial entity",
        ),
        ("application", LabelKind::Entity, "application"),
        ("work_of_art", LabelKind::Entity, "work of art"),
        ("city", LabelKind::Entity, "city"),
        ("north_province", LabelKind::Entity, "North Province"),
        ("south_province", LabelKind::Entity, "South Province"),
        ("delta_region", LabelKind::Entity, "Delta Region"),
        ("east_march", LabelKind::Entity, "East March"),
        ("harbor_city", LabelKind::Entity, "Harbor City"),
        ("narrative_location", LabelKind::Relation, "narrative location"),
        ("instance_of", LabelKind::Relation, "instance of"),
    ];
    KnowledgeGraph::from_parts(triples, labels).expect("territory fixture is well formed")
}

pub fn territory_gateway() -> ScriptedGateway {
    let mut gw = ScriptedGateway::new();
    let q = TERRITORY_QUESTION;
    gw.insert(
        TaskTag::CoreGen,
        q,
        fence(&format!("{APPLICATION_CORE}\n{WORK_OF_ART_CORE}")),
    );
    gw.insert(TaskTag::TypePred, q, fence("compare_and_count"));
    let (payload, resp) = plan_for(
        q,
        QuestionType::CompareAndCount,
        TERRITORY_TEMPLATE,
        &[APPLICATION_CORE, WORK_OF_ART_CORE],
        serde_json::json!({ "constants": { "number": 840 }, "functions": { "compare": "GE" } }),
    );
    gw.insert(TaskTag::PlanGen, &payload, resp);
    gw
}

/// The plan request sent for the territory question.
pub fn territory_gateway_bundle() -> PromptBundle {
    let (payload, _) = plan_for(
        TERRITORY_QUESTION,
        QuestionType::CompareAndCount,
        TERRITORY_TEMPLATE,
        &[APPLICATION_CORE, WORK_OF_ART_CORE],
        serde_json::json!({}),
    );
    PromptBundle {
        task: TaskTag::PlanGen,
        instruction: PLAN_INSTRUCTION.into(),
        exemplars: Vec::new(),
        payload,
    }
}

/// A named bundled fixture: graph, gateway and its dialog.
pub fn load_fixture(name: &str) -> Option<(KnowledgeGraph, ScriptedGateway, Vec<String>)> {
    match name {
        "family" => {
            let g = family_graph();
            let gw = family_gateway(&g);
            Some((g, gw, FAMILY_TURNS.iter().map(|s| s.to_string()).collect()))
        }
        "count-territories" => Some((
            territory_graph(),
            territory_gateway(),
            vec![TERRITORY_QUESTION.to_string()],
        )),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, Pipeline};
    use crate::calibrate::{Linker, TrigramEmbedder};
    use crate::eval::EvalResult;
    use crate::kg::EntityId;
    use crate::memory::GlobalMemory;

    fn run(name: &str) -> Vec<crate::agent::TurnOutcome> {
        let (g, gw, turns) = load_fixture(name).unwrap();
        let emb = TrigramEmbedder::default();
        let linker = Linker::new(&g, &emb);
        let config = AgentConfig::default();
        let p = Pipeline {
            kg: &g,
            linker: &linker,
            llm: &gw,
            config: &config,
        };
        let mut state = DialogState::new();
        let mut mem = GlobalMemory::new();
        turns.iter().map(|q| p.answer_turn(&mut state, &mut mem, q)).collect()
    }

    fn ids(xs: &[&str]) -> EvalResult {
        EvalResult::EntitySet(xs.iter().map(|x| EntityId::new(*x)).collect())
    }

    #[test]
    fn family_dialog() {
        let out = run("family");
        assert_eq!(out[0].result, Some(ids(&SONS)));
        assert_eq!(out[1].trace.resolved_question, "Who are siblings of Francesco?");
        assert_eq!(out[2].trace.resolved_question, "Who are siblings of Giovanni Ludovico?");
        assert_eq!(
            out[2].result,
            Some(ids(&[
                "Francesco_of_Saluzzo",
                "Gian_Gabriele_I_of_Saluzzo",
                "Michele_Antonio_of_Saluzzo"
            ]))
        );
        assert!(out[2]
            .trace
            .sexpr
            .as_ref()
            .unwrap()
            .to_string()
            .contains("(JOIN instance_of male_person)"));
    }

    #[test]
    fn territory_count() {
        let out = run("count-territories");
        let t = &out[0].trace;
        assert_eq!(t.template_body.as_deref(), Some(TERRITORY_TEMPLATE));
        assert_eq!(out[0].result, Some(EvalResult::Integer(2)));
        assert!(t.sparql.as_ref().unwrap().contains(">= 840"));
    }
}
