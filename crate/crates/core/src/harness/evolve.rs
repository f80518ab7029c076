//! Score trend over a dialog stream, with and without global memory.

use serde::{Deserialize, Serialize};

use super::dialog::DialogFile;
use super::gold::{GoldGateway, GoldMode};
use super::metrics::score_turn;
use super::synth::{gen_synthetic, SynthError, SynthSpec, SyntheticSet};
use super::table::render;
use crate::agent::{AgentConfig, Pipeline};
use crate::calibrate::{Embedder, Linker};
use crate::kg::KnowledgeGraph;
use crate::llm::LlmGateway;
use crate::memory::{DialogState, GlobalMemory};
use crate::template::QuestionType;

pub const COVERAGE_BUCKETS: [&str; 5] = ["0-20%", "20-40%", "40-60%", "60-80%", "80-100%"];
pub const TURN_BUCKETS: [&str; 5] = ["0-3", "3-6", "6-9", "9-12", "12-16"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub turns: usize,
    pub memory: f64,
    pub no_memory: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub turns: usize,
    pub memory_records: usize,
    pub coverage: Vec<BucketRow>,
    pub dialog_turns: Vec<BucketRow>,
}

struct Scored {
    position: usize,
    turn: usize,
    score: f64,
}

fn run_stream(stream: &DialogFile, p: &Pipeline<'_>) -> (Vec<Scored>, usize) {
    let mut memory = GlobalMemory::new();
    let mut out = Vec::new();
    for dialog in &stream.dialogs {
        let mut state = DialogState::new();
        for (t, gold) in dialog.turns.iter().enumerate() {
            let o = p.answer_turn(&mut state, &mut memory, &gold.q);
            out.push(Scored {
                position: out.len(),
                turn: t,
                score: score_turn(&gold.gold, o.result.as_ref()),
            });
        }
    }
    (out, memory.len())
}

fn coverage_bucket(position: usize, total: usize) -> usize {
    (position * COVERAGE_BUCKETS.len() / total.max(1)).min(COVERAGE_BUCKETS.len() - 1)
}

fn turn_bucket(turn: usize) -> usize {
    (turn / 3).min(TURN_BUCKETS.len() - 1)
}

fn rows(labels: &[&str], with: &[Scored], without: &[Scored], key: impl Fn(&Scored) -> usize) -> Vec<BucketRow> {
    let mut out = Vec::new();
    for (b, label) in labels.iter().enumerate() {
        let pick = |xs: &[Scored]| -> Vec<f64> { xs.iter().filter(|s| key(s) == b).map(|s| s.score).collect() };
        let (a, z) = (pick(with), pick(without));
        if a.is_empty() {
            continue;
        }
        out.push(BucketRow {
            bucket: label.to_string(),
            turns: a.len(),
            memory: a.iter().sum::<f64>() / a.len() as f64,
            no_memory: z.iter().sum::<f64>() / z.len().max(1) as f64,
        });
    }
    out
}

impl EvolveReport {
    pub fn coverage_non_decreasing(&self) -> bool {
        self.coverage.windows(2).all(|w| w[1].memory >= w[0].memory)
    }

    /// Whether memory strictly beats the baseline in the last `n` coverage buckets.
    pub fn memory_wins_last(&self, n: usize) -> bool {
        self.coverage.len() >= n
            && self.coverage[self.coverage.len() - n..]
                .iter()
                .all(|r| r.memory > r.no_memory)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        let fmt = |rs: &[BucketRow]| -> Vec<Vec<String>> {
            rs.iter()
                .map(|r| {
                    vec![
                        r.bucket.clone(),
                        r.turns.to_string(),
                        format!("{:.4}", r.memory),
                        format!("{:.4}", r.no_memory),
                    ]
                })
                .collect()
        };
        let mut out = String::from("context coverage\n");
        out.push_str(&render(
            &["bucket", "turns", "memory", "no_memory"],
            &fmt(&self.coverage),
        ));
        out.push_str("\ndialog turn\n");
        out.push_str(&render(
            &["bucket", "turns", "memory", "no_memory"],
            &fmt(&self.dialog_turns),
        ));
        out
    }
}

/// Scores the stream twice, with global memory and with it disabled,
/// using the same gateway and configuration otherwise.
pub fn run_evolve_report(
    stream: &DialogFile,
    g: &KnowledgeGraph,
    emb: &dyn Embedder,
    llm: &dyn LlmGateway,
    config: &AgentConfig,
) -> EvolveReport {
    let linker = Linker::new(g, emb);
    let mut with_cfg = config.clone();
    with_cfg.ablations.no_memory = false;
    let mut without_cfg = config.clone();
    without_cfg.ablations.no_memory = true;
    let run = |cfg: &AgentConfig| {
        let p = Pipeline {
            kg: g,
            linker: &linker,
            llm,
            config: cfg,
        };
        run_stream(stream, &p)
    };
    let (with, records) = run(&with_cfg);
    let (without, _) = run(&without_cfg);
    let total = with.len();
    EvolveReport {
        turns: total,
        memory_records: records,
        coverage: rows(&COVERAGE_BUCKETS, &with, &without, |s| {
            coverage_bucket(s.position, total)
        }),
        dialog_turns: rows(&TURN_BUCKETS, &with, &without, |s| turn_bucket(s.turn)),
    }
}

/// The default stream: comparative and superlative questions over a few
/// relations, sixteen turns per dialog.
pub fn evolve_stream(seed: u64) -> Result<SyntheticSet, SynthError> {
    let spec = SynthSpec {
        n_entities: 100,
        n_relations: 3,
        n_dialogs: 16,
        turns_per_dialog: 16,
        type_mix: [
            (QuestionType::Compare, 2),
            (QuestionType::CompareAndCount, 2),
            (QuestionType::Optimize, 1),
        ]
        .into_iter()
        .collect(),
        followup_rate: 0.0,
    };
    gen_synthetic(seed, &spec)
}

/// Trend report over `stream` with the exemplar-dependent gold gateway.
pub fn constructed_evolve_report(stream: &SyntheticSet, emb: &dyn Embedder, config: &AgentConfig) -> EvolveReport {
    let gw = GoldGateway::new(&stream.dialogs, &stream.graph, GoldMode::ExemplarDependent);
    run_evolve_report(&stream.dialogs, &stream.graph, emb, &gw, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_edges() {
        assert_eq!(coverage_bucket(0, 10), 0);
        assert_eq!(coverage_bucket(9, 10), 4);
        assert_eq!(coverage_bucket(2, 10), 1);
        assert_eq!(turn_bucket(2), 0);
        assert_eq!(turn_bucket(3), 1);
        assert_eq!(turn_bucket(15), 4);
        assert_eq!(turn_bucket(40), 4);
    }
}
