use std::collections::{BTreeMap, HashSet};

use seal_core::agent::{AgentConfig, Pipeline};
use seal_core::calibrate::{Linker, DEFAULT_EMBEDDER};
use seal_core::eval::EvalResult;
use seal_core::harness::{gen_synthetic, run_batch, DialogFile, GoldAnswer, GoldGateway, GoldMode, SynthSpec};
use seal_core::memory::{DialogState, GlobalMemory};
use seal_core::template::QuestionType;

fn spec() -> SynthSpec {
    SynthSpec {
        n_entities: 60,
        n_dialogs: 20,
        turns_per_dialog: 5,
        ..SynthSpec::default()
    }
}

/// Scores a prediction from scratch: set F1 for entity answers, exact match
/// otherwise.
fn reference_score(gold: &GoldAnswer, predicted: Option<&EvalResult>) -> (bool, f64) {
    match gold {
        GoldAnswer::Entities(g) => {
            let p: HashSet<&str> = match predicted {
                Some(EvalResult::EntitySet(s)) => s.iter().map(|e| e.as_str()).collect(),
                _ => HashSet::new(),
            };
            let g: HashSet<&str> = g.iter().map(|e| e.as_str()).collect();
            let score = if g.is_empty() && p.is_empty() {
                1.0
            } else {
                let tp = g.intersection(&p).count() as f64;
                if tp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (g.len() + p.len()) as f64
                }
            };
            (true, score)
        }
        GoldAnswer::Boolean(b) => (false, (predicted == Some(&EvalResult::Boolean(*b))) as u8 as f64),
        GoldAnswer::Integer(n) => (false, (predicted == Some(&EvalResult::Integer(*n))) as u8 as f64),
    }
}

fn avg(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn metrics_agree_with_a_reference_scorer() {
    let set = gen_synthetic(17, &spec()).unwrap();
    assert_eq!(set.dialogs.dialogs.len(), 20);
    let gw = GoldGateway::new(&set.dialogs, &set.graph, GoldMode::Exact).with_typo_rate(0.4);
    let linker = Linker::new(&set.graph, &DEFAULT_EMBEDDER);
    let config = AgentConfig::default();
    let p = Pipeline {
        kg: &set.graph,
        linker: &linker,
        llm: &gw,
        config: &config,
    };
    let report = run_batch(&set.dialogs, &p, &mut GlobalMemory::new());

    let mut memory = GlobalMemory::new();
    let mut per_type: BTreeMap<QuestionType, (bool, Vec<f64>)> = BTreeMap::new();
    for dialog in &set.dialogs.dialogs {
        let mut state = DialogState::new();
        for t in &dialog.turns {
            let out = p.answer_turn(&mut state, &mut memory, &t.q);
            let (is_f1, s) = reference_score(&t.gold, out.result.as_ref());
            let entry = per_type.entry(t.qtype).or_insert((is_f1, Vec::new()));
            entry.1.push(s);
        }
    }
    let m = &report.metrics;
    assert_eq!(m.turns, 100);
    assert_eq!(m.per_type.len(), per_type.len());
    for (t, (_, xs)) in &per_type {
        let got = &m.per_type[t];
        assert_eq!(got.turns, xs.len(), "{t}");
        assert!((got.score - avg(xs)).abs() < 1e-12, "{t}: {} vs {}", got.score, avg(xs));
    }
    let pick = |f1: bool| -> Vec<f64> {
        per_type
            .values()
            .filter(|(is_f1, _)| *is_f1 == f1)
            .map(|(_, xs)| avg(xs))
            .collect()
    };
    let all: Vec<f64> = per_type.values().map(|(_, xs)| avg(xs)).collect();
    assert!((m.macro_f1.unwrap() - avg(&pick(true))).abs() < 1e-12);
    assert!((m.accuracy.unwrap() - avg(&pick(false))).abs() < 1e-12);
    assert!((m.overall.unwrap() - avg(&all)).abs() < 1e-12);
    assert!(!pick(true).is_empty() && !pick(false).is_empty());
}

#[test]
fn report_records_every_turn_in_order() {
    let set = gen_synthetic(5, &spec()).unwrap();
    let gw = GoldGateway::new(&set.dialogs, &set.graph, GoldMode::Exact);
    let linker = Linker::new(&set.graph, &DEFAULT_EMBEDDER);
    let config = AgentConfig::default();
    let p = Pipeline {
        kg: &set.graph,
        linker: &linker,
        llm: &gw,
        config: &config,
    };
    let mut memory = GlobalMemory::new();
    let report = run_batch(&set.dialogs, &p, &mut memory);
    let questions: Vec<&str> = set.dialogs.turns().map(|t| t.q.as_str()).collect();
    let recorded: Vec<&str> = report.turns.iter().map(|r| r.question.as_str()).collect();
    assert_eq!(questions, recorded);
    assert_eq!(report.memory_records, memory.len());
    assert!(report.metrics.overall.unwrap() > 0.95, "{}", report.to_table());
    let back: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back["turns"].as_array().unwrap().len(), 100);
}

#[test]
fn dialog_files_round_trip_through_disk() {
    let set = gen_synthetic(8, &spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dialogs.json");
    std::fs::write(&path, set.dialogs.to_json()).unwrap();
    let loaded = DialogFile::load(&path).unwrap();
    assert_eq!(loaded, set.dialogs);
    std::fs::write(
        &path,
        r#"{"dialogs": [{"turns": [{"q": "", "gold": {"kind": "boolean", "value": true}, "qtype": "verify"}]}]}"#,
    )
    .unwrap();
    let err = DialogFile::load(&path).unwrap_err().to_string();
    assert!(err.contains("empty question"), "{err}");
}
