use serde::{Deserialize, Serialize};

use super::dialog::DialogFile;
use super::metrics::{score_turn, structure_overlap, MetricsReport, TurnScore};
use crate::agent::Pipeline;
use crate::memory::{DialogState, GlobalMemory};
use crate::template::QuestionType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialog: usize,
    pub turn: usize,
    pub question: String,
    pub resolved_question: String,
    pub qtype: QuestionType,
    pub predicted_type: Option<QuestionType>,
    pub template: Option<String>,
    pub sexpr: Option<String>,
    pub sparql: Option<String>,
    pub answer: Option<String>,
    pub score: f64,
    pub probes: usize,
    pub retries: usize,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub metrics: MetricsReport,
    pub memory_records: usize,
    pub turns: Vec<TurnRecord>,
}

impl BatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        self.metrics.to_table()
    }
}

/// Runs every dialog in order. Dialog state is reset per dialog; the
/// global memory is shared across the whole run.
pub fn run_batch(dialogs: &DialogFile, p: &Pipeline<'_>, memory: &mut GlobalMemory) -> BatchReport {
    let mut scores = Vec::new();
    let mut turns = Vec::new();
    for (d, dialog) in dialogs.dialogs.iter().enumerate() {
        let mut state = DialogState::new();
        for (i, gold) in dialog.turns.iter().enumerate() {
            let out = p.answer_turn(&mut state, memory, &gold.q);
            let t = out.trace;
            let score = score_turn(&gold.gold, out.result.as_ref());
            scores.push(TurnScore {
                qtype: gold.qtype,
                score,
                probes: t.probes,
                parsed: t.sexpr.is_some(),
                overlap: gold.gold_sexpr.as_ref().map(|g| structure_overlap(g, t.sexpr.as_ref())),
            });
            turns.push(TurnRecord {
                dialog: d,
                turn: i,
                question: gold.q.clone(),
                resolved_question: t.resolved_question,
                qtype: gold.qtype,
                predicted_type: t.refined_type,
                template: t.template_id,
                sexpr: t.sexpr.as_ref().map(ToString::to_string),
                sparql: t.sparql,
                answer: out.result.as_ref().map(|r| r.render()),
                score,
                probes: t.probes,
                retries: t.retries,
                failure: t.failure,
            });
        }
    }
    BatchReport {
        metrics: MetricsReport::from_scores(&scores),
        memory_records: memory.len(),
        turns,
    }
}
