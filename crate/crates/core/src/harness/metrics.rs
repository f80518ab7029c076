use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dialog::GoldAnswer;
use super::table::{fmt_score, render};
use crate::eval::EvalResult;
use crate::kg::EntityId;
use crate::sexpr::SExpr;
use crate::template::QuestionType;

/// Harmonic mean of precision and recall; two empty sets agree fully.
pub fn f1(gold: &BTreeSet<EntityId>, predicted: &BTreeSet<EntityId>) -> f64 {
    if gold.is_empty() && predicted.is_empty() {
        return 1.0;
    }
    let hit = gold.intersection(predicted).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / predicted.len() as f64;
    let r = hit / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// F1 for entity answers, exact match for booleans and integers.
pub fn score_turn(gold: &GoldAnswer, predicted: Option<&EvalResult>) -> f64 {
    match (gold, predicted) {
        (GoldAnswer::Entities(g), Some(EvalResult::EntitySet(p))) => f1(g, p),
        (GoldAnswer::Entities(g), _) => f1(g, &BTreeSet::new()),
        (GoldAnswer::Boolean(g), Some(EvalResult::Boolean(p))) => f64::from(u8::from(g == p)),
        (GoldAnswer::Integer(g), Some(EvalResult::Integer(p))) => f64::from(u8::from(g == p)),
        _ => 0.0,
    }
}

/// Size of the multiset intersection of node labels over the gold node count.
pub fn structure_overlap(gold: &SExpr, predicted: Option<&SExpr>) -> f64 {
    let gold_nodes = gold.node_labels();
    if gold_nodes.is_empty() {
        return 1.0;
    }
    let Some(p) = predicted else { return 0.0 };
    let mut bag: BTreeMap<String, usize> = BTreeMap::new();
    for l in p.node_labels() {
        *bag.entry(l).or_default() += 1;
    }
    let mut shared = 0;
    for l in gold_nodes.iter() {
        if let Some(n) = bag.get_mut(l) {
            if *n > 0 {
                *n -= 1;
                shared += 1;
            }
        }
    }
    shared as f64 / gold_nodes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnScore {
    pub qtype: QuestionType,
    pub score: f64,
    pub probes: usize,
    pub parsed: bool,
    pub overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub turns: usize,
    /// `f1` or `accuracy`.
    pub metric: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub turns: usize,
    pub per_type: BTreeMap<QuestionType, TypeMetrics>,
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
    /// Unweighted mean of the per-type scores.
    pub overall: Option<f64>,
    pub probes_total: usize,
    pub probes_mean: f64,
    pub structure_overlap: Option<f64>,
    pub parse_success: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn from_scores(scores: &[TurnScore]) -> Self {
        let mut by_type: BTreeMap<QuestionType, Vec<f64>> = BTreeMap::new();
        for s in scores {
            by_type.entry(s.qtype).or_default().push(s.score);
        }
        let per_type: BTreeMap<QuestionType, TypeMetrics> = by_type
            .into_iter()
            .map(|(t, xs)| {
                let metric = if t.scored_by_f1() { "f1" } else { "accuracy" };
                (
                    t,
                    TypeMetrics {
                        turns: xs.len(),
                        metric: metric.into(),
                        score: mean(xs).unwrap_or(0.0),
                    },
                )
            })
            .collect();
        let subset = |f1: bool| {
            mean(
                per_type
                    .iter()
                    .filter(|(t, _)| t.scored_by_f1() == f1)
                    .map(|(_, m)| m.score),
            )
        };
        let probes_total: usize = scores.iter().map(|s| s.probes).sum();
        MetricsReport {
            turns: scores.len(),
            macro_f1: subset(true),
            accuracy: subset(false),
            overall: mean(per_type.values().map(|m| m.score)),
            per_type,
            probes_total,
            probes_mean: if scores.is_empty() {
                0.0
            } else {
                probes_total as f64 / scores.len() as f64
            },
            structure_overlap: mean(scores.iter().filter_map(|s| s.overlap)),
            parse_success: mean(scores.iter().map(|s| f64::from(u8::from(s.parsed)))).unwrap_or(0.0),
        }
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_type
            .iter()
            .map(|(t, m)| {
                vec![
                    t.to_string(),
                    m.turns.to_string(),
                    m.metric.clone(),
                    fmt_score(Some(m.score)),
                ]
            })
            .collect();
        rows.push(vec![
            "macro_f1".into(),
            String::new(),
            "f1".into(),
            fmt_score(self.macro_f1),
        ]);
        rows.push(vec![
            "accuracy".into(),
            String::new(),
            "accuracy".into(),
            fmt_score(self.accuracy),
        ]);
        rows.push(vec![
            "overall".into(),
            self.turns.to_string(),
            "mean".into(),
            fmt_score(self.overall),
        ]);
        rows.push(vec![
            "structure_overlap".into(),
            String::new(),
            "ratio".into(),
            fmt_score(self.structure_overlap),
        ]);
        rows.push(vec![
            "parse_success".into(),
            String::new(),
            "ratio".into(),
            fmt_score(Some(self.parse_success)),
        ]);
        rows.push(vec![
            "probes".into(),
            self.probes_total.to_string(),
            "mean".into(),
            format!("{:.2}", self.probes_mean),
        ]);
        render(&["subset", "turns", "metric", "score"], &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;

    fn set(xs: &[&str]) -> BTreeSet<EntityId> {
        xs.iter().map(|x| EntityId::new(*x)).collect()
    }

    #[test]
    fn f1_values() {
        assert_eq!(f1(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(f1(&set(&["a", "b"]), &set(&["c"])), 0.0);
        // p = 1/2, r = 1/4
        let v = f1(&set(&["a", "b", "c", "d"]), &set(&["a", "z"]));
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_half_flipped() {
        let s = |t, score| TurnScore {
            qtype: t,
            score,
            probes: 1,
            parsed: true,
            overlap: None,
        };
        let r = MetricsReport::from_scores(&[s(QuestionType::Simple, 1.0), s(QuestionType::Verify, 1.0)]);
        assert_eq!(r.macro_f1, Some(1.0));
        assert_eq!(r.accuracy, Some(1.0));
        let flipped = [true, false, true, false].map(|b| {
            let gold = GoldAnswer::Boolean(true);
            s(QuestionType::Verify, score_turn(&gold, Some(&EvalResult::Boolean(b))))
        });
        let r = MetricsReport::from_scores(&flipped);
        assert_eq!(r.per_type[&QuestionType::Verify].score, 0.5);
        assert_eq!(r.macro_f1, None);
    }

    #[test]
    fn overlap_counts_multiset() {
        let gold = parse("(AND (JOIN p a) (JOIN p b))").unwrap();
        assert_eq!(structure_overlap(&gold, Some(&gold)), 1.0);
        let pred = parse("(JOIN p a)").unwrap();
        let n = gold.node_labels().len() as f64;
        assert_eq!(structure_overlap(&gold, Some(&pred)), 3.0 / n);
        assert_eq!(structure_overlap(&gold, None), 0.0);
    }
}
