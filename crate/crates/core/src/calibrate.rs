//! Calibration of drafted cores: syntax repair, embedding-based light
//! linking of surface leaves to graph ids, and execution-filtered variant
//! enumeration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::eval;
use crate::kg::{KnowledgeGraph, LabelKind};
use crate::sexpr::{
    is_core, match_core_pattern, parse, parse_lenient, type_check, Function, Head, SExpr, CORE_PATTERNS,
};

pub const EMBED_DIM: usize = 256;

/// Maps text to a unit-length vector of constant dimension.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Character trigrams hashed (FNV-1a) into a fixed number of buckets.
#[derive(Clone, Debug)]
pub struct TrigramEmbedder {
    pub dim: usize,
}

/// Shared default embedder, for holders that need a `'static` borrow.
pub static DEFAULT_EMBEDDER: TrigramEmbedder = TrigramEmbedder { dim: EMBED_DIM };

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: EMBED_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercases and turns underscores into spaces, so `common_name` and
/// `Common name` are the same surface.
pub fn normalize_surface(s: &str) -> String {
    s.trim().replace('_', " ").to_lowercase()
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let padded: Vec<char> = format!("  {} ", normalize_surface(text)).chars().collect();
        for w in padded.windows(3) {
            let s: String = w.iter().collect();
            v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkCandidate {
    pub surface: String,
    pub kind: LabelKind,
    pub resolved: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "repair", rename_all = "snake_case")]
pub enum Repair {
    BalancedParens { inserted: String, at: Vec<usize> },
    DroppedArgument { function: String, argument: String },
    UnwrappedSingleton { function: String },
    SnappedToPattern { pattern: u8, retained: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("unrepairable draft `{draft}`: {reason}")]
    Unrepairable {
        draft: String,
        reason: String,
        log: Vec<Repair>,
    },
    #[error("no {0:?} labels to link against")]
    EmptyDictionary(LabelKind),
    #[error("invalid calibration setting: {0}")]
    Config(String),
}

/// Result of [`correct_syntax`]: a parseable core plus what was changed.
#[derive(Clone, Debug, PartialEq)]
pub struct Repaired {
    pub expr: SExpr,
    pub log: Vec<Repair>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

fn tokens(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut atom = String::new();
    let flush = |atom: &mut String, out: &mut Vec<Tok>| {
        if !atom.is_empty() {
            out.push(Tok::Atom(std::mem::take(atom)));
        }
    };
    for c in text.chars() {
        match c {
            '(' | ')' => {
                flush(&mut atom, &mut out);
                out.push(if c == '(' { Tok::Open } else { Tok::Close });
            }
            c if c.is_whitespace() => flush(&mut atom, &mut out),
            c => atom.push(c),
        }
    }
    flush(&mut atom, &mut out);
    out
}

fn render(toks: &[Tok]) -> String {
    let mut s = String::new();
    for (i, t) in toks.iter().enumerate() {
        let prev_open = i > 0 && toks[i - 1] == Tok::Open;
        match t {
            Tok::Close => s.push(')'),
            t => {
                if i > 0 && !prev_open {
                    s.push(' ');
                }
                match t {
                    Tok::Open => s.push('('),
                    Tok::Atom(a) => s.push_str(a),
                    Tok::Close => unreachable!(),
                }
            }
        }
    }
    s
}

/// Ranks a repaired candidate: lower is better.
fn tier(text: &str) -> Option<u8> {
    match parse(text) {
        Ok(e) if type_check(&e).is_ok() && is_core(&e) && match_core_pattern(&e).is_some() => Some(0),
        Ok(e) if type_check(&e).is_ok() && is_core(&e) => Some(1),
        Ok(_) => Some(2),
        Err(_) if parse_lenient(text).is_ok() => Some(3),
        Err(_) => None,
    }
}

const MAX_SEARCHED_INSERTIONS: usize = 2;

fn balance(draft: &str, log: &mut Vec<Repair>) -> String {
    let toks = tokens(draft);
    let opens = toks.iter().filter(|t| **t == Tok::Open).count() as isize;
    let closes = toks.iter().filter(|t| **t == Tok::Close).count() as isize;
    let diff = opens - closes;
    if diff == 0 {
        return draft.to_string();
    }
    let (ins, missing) = if diff > 0 {
        (Tok::Close, diff as usize)
    } else {
        (Tok::Open, (-diff) as usize)
    };
    let fallback = {
        let mut t = toks.clone();
        if ins == Tok::Close {
            t.extend(std::iter::repeat_n(Tok::Close, missing));
            (t, vec![toks.len(); missing])
        } else {
            for _ in 0..missing {
                t.insert(0, Tok::Open);
            }
            (t, vec![0; missing])
        }
    };
    let mut best: Option<(u8, Vec<Tok>, Vec<usize>)> = None;
    if missing <= MAX_SEARCHED_INSERTIONS {
        let mut consider = |cand: Vec<Tok>, at: Vec<usize>| {
            if let Some(t) = tier(&render(&cand)) {
                if best.as_ref().is_none_or(|(bt, _, _)| t < *bt) {
                    best = Some((t, cand, at));
                }
            }
        };
        // end/start placement first, so it wins ties
        consider(fallback.0.clone(), fallback.1.clone());
        let positions: Vec<usize> = (0..=toks.len()).rev().collect();
        for &p in &positions {
            let mut one = toks.clone();
            one.insert(p, ins.clone());
            if missing == 1 {
                consider(one, vec![p]);
            } else {
                for q in (p..=one.len()).rev() {
                    let mut two = one.clone();
                    two.insert(q, ins.clone());
                    consider(two, vec![p, q]);
                }
            }
        }
    }
    let (fixed, at) = match best {
        Some((_, t, at)) => (t, at),
        None => fallback,
    };
    log.push(Repair::BalancedParens {
        inserted: match ins {
            Tok::Open => "(".repeat(missing),
            _ => ")".repeat(missing),
        },
        at,
    });
    render(&fixed)
}

fn fix_arity(e: &SExpr, log: &mut Vec<Repair>) -> SExpr {
    match e {
        SExpr::Call { head, args } => {
            let mut args: Vec<SExpr> = args.iter().map(|a| fix_arity(a, log)).collect();
            if let Head::Func(f) = head {
                if let Some(max) = f.arity().max() {
                    while args.len() > max {
                        let dropped = args.pop().unwrap();
                        log.push(Repair::DroppedArgument {
                            function: f.name().into(),
                            argument: dropped.to_string(),
                        });
                    }
                }
                if matches!(f, Function::And | Function::Or) && args.len() == 1 {
                    log.push(Repair::UnwrappedSingleton {
                        function: f.name().into(),
                    });
                    return args.pop().unwrap();
                }
            }
            SExpr::Call {
                head: head.clone(),
                args,
            }
        }
        leaf => leaf.clone(),
    }
}

fn leaf_names(e: &SExpr) -> Vec<String> {
    let mut out = Vec::new();
    e.walk(&mut |n| match n {
        SExpr::Entity(s) | SExpr::Relation(s) | SExpr::Placeholder(s) => out.push(s.clone()),
        SExpr::Number(n) => out.push(n.to_string()),
        SExpr::Call { .. } => {}
    });
    out
}

fn fill(skel: &SExpr, leaves: &mut std::slice::Iter<'_, String>) -> Option<SExpr> {
    Some(match skel {
        SExpr::Entity(_) => SExpr::entity(leaves.next()?.clone()),
        SExpr::Relation(_) => SExpr::relation(leaves.next()?.clone()),
        SExpr::Call {
            head: Head::Func(Function::Values),
            ..
        } => SExpr::call(Function::Values, vec![SExpr::entity(leaves.next()?.clone())]),
        SExpr::Call { head, args } => SExpr::Call {
            head: head.clone(),
            args: args.iter().map(|a| fill(a, leaves)).collect::<Option<_>>()?,
        },
        other => other.clone(),
    })
}

fn snap(e: &SExpr, log: &mut Vec<Repair>) -> Option<SExpr> {
    let leaves = leaf_names(e);
    let total = leaves.len();
    let mut best: Option<(usize, u8, SExpr)> = None;
    for p in &CORE_PATTERNS {
        let slots = p.slot_count();
        if slots > total || 2 * slots < total {
            continue;
        }
        let Some(filled) = fill(p.tree(), &mut leaves.iter()) else {
            continue;
        };
        if type_check(&filled).is_err() {
            continue;
        }
        if best.as_ref().is_none_or(|(kept, _, _)| slots > *kept) {
            best = Some((slots, p.id, filled));
        }
    }
    let (retained, pattern, filled) = best?;
    log.push(Repair::SnappedToPattern {
        pattern,
        retained,
        total,
    });
    Some(filled)
}

/// Repairs a drafted core in three stages: parenthesis balancing, arity
/// fixes, then snapping to the closest core skeleton.
pub fn correct_syntax(draft: &str) -> Result<Repaired, CalibrationError> {
    let mut log = Vec::new();
    let fail = |reason: String, log: Vec<Repair>| CalibrationError::Unrepairable {
        draft: draft.to_string(),
        reason,
        log,
    };
    if let Ok(e) = parse(draft) {
        if is_core(&e) && type_check(&e).is_ok() {
            return Ok(Repaired { expr: e, log });
        }
    }
    let balanced = balance(draft, &mut log);
    let lenient = parse_lenient(&balanced).map_err(|e| fail(e.to_string(), log.clone()))?;
    let fixed = fix_arity(&lenient, &mut log);
    if is_core(&fixed) && type_check(&fixed).is_ok() {
        return Ok(Repaired { expr: fixed, log });
    }
    match snap(&fixed, &mut log) {
        Some(e) => Ok(Repaired { expr: e, log }),
        None => Err(fail("no core skeleton retains half of the leaves".into(), log)),
    }
}

struct LabelRow {
    id: String,
    norm: String,
    vec: Vec<f64>,
}

/// Precomputed label embeddings for one graph.
pub struct Linker<'a> {
    emb: &'a dyn Embedder,
    entities: Vec<LabelRow>,
    relations: Vec<LabelRow>,
}

impl<'a> Linker<'a> {
    pub fn new(g: &KnowledgeGraph, emb: &'a dyn Embedder) -> Self {
        let rows = |kind| {
            g.all_labels(kind)
                .into_iter()
                .map(|(id, label)| LabelRow {
                    vec: emb.embed(&label),
                    norm: normalize_surface(&label),
                    id,
                })
                .collect()
        };
        Linker {
            emb,
            entities: rows(LabelKind::Entity),
            relations: rows(LabelKind::Relation),
        }
    }

    /// Top-`k` ids of `kind` for a surface form, best first.
    pub fn link(&self, surface: &str, kind: LabelKind, k: usize) -> Result<Vec<LinkCandidate>, CalibrationError> {
        let rows = match kind {
            LabelKind::Entity => &self.entities,
            LabelKind::Relation => &self.relations,
        };
        if rows.is_empty() {
            return Err(CalibrationError::EmptyDictionary(kind));
        }
        let norm = normalize_surface(surface);
        let v = self.emb.embed(surface);
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for row in rows {
            let score = if row.norm == norm || normalize_surface(&row.id) == norm {
                1.0
            } else {
                cosine(&v, &row.vec)
            };
            let slot = best.entry(row.id.as_str()).or_insert(f64::NEG_INFINITY);
            if score > *slot {
                *slot = score;
            }
        }
        let mut ranked: Vec<(&str, f64)> = best.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(ranked
            .into_iter()
            .take(k.max(1))
            .map(|(id, score)| LinkCandidate {
                surface: surface.to_string(),
                kind,
                resolved: id.to_string(),
                score,
            })
            .collect())
    }
}

pub fn link_leaf(
    surface: &str,
    kind: LabelKind,
    g: &KnowledgeGraph,
    emb: &dyn Embedder,
    k: usize,
) -> Result<Vec<LinkCandidate>, CalibrationError> {
    if k == 0 {
        return Err(CalibrationError::Config("k must be at least 1".into()));
    }
    Linker::new(g, emb).link(surface, kind, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub link_k: usize,
    pub keep_variants: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            link_k: 1,
            keep_variants: 1,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        for (name, v) in [("link_k", self.link_k), ("keep_variants", self.keep_variants)] {
            if v != 1 && v != 3 {
                return Err(CalibrationError::Config(format!("{name} must be 1 or 3, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCore {
    pub expr: SExpr,
    pub provenance: Vec<LinkCandidate>,
    pub nonempty: bool,
    pub score: f64,
}

impl CalibratedCore {
    pub fn min_link_score(&self) -> f64 {
        self.provenance.iter().map(|c| c.score).fold(1.0, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub variants: Vec<CalibratedCore>,
    pub probes: usize,
    pub repairs: Vec<Repair>,
}

fn surface_leaves(e: &SExpr) -> Vec<(LabelKind, String)> {
    let mut out: Vec<(LabelKind, String)> = Vec::new();
    e.walk(&mut |n| {
        let key = match n {
            SExpr::Entity(s) => (LabelKind::Entity, s.clone()),
            SExpr::Relation(s) => (LabelKind::Relation, s.clone()),
            _ => return,
        };
        if !out.contains(&key) {
            out.push(key);
        }
    });
    out
}

fn substitute(e: &SExpr, choice: &BTreeMap<(LabelKind, String), String>) -> SExpr {
    e.map_leaves(&mut |leaf| match leaf {
        SExpr::Entity(s) => SExpr::entity(choice[&(LabelKind::Entity, s.clone())].clone()),
        SExpr::Relation(s) => SExpr::relation(choice[&(LabelKind::Relation, s.clone())].clone()),
        other => other.clone(),
    })
}

fn is_probe_nonempty(e: &SExpr, g: &KnowledgeGraph) -> bool {
    eval(e, g).map(|r| r.is_nonempty()).unwrap_or(false)
}

/// Calibrates with a prebuilt [`Linker`].
pub fn calibrate_with(
    draft: &str,
    g: &KnowledgeGraph,
    linker: &Linker<'_>,
    cfg: CalibrationConfig,
) -> Result<Calibration, CalibrationError> {
    cfg.validate()?;
    let Repaired { expr, log } = correct_syntax(draft)?;
    let leaves = surface_leaves(&expr);
    let mut candidates = Vec::with_capacity(leaves.len());
    for (kind, surface) in &leaves {
        candidates.push(linker.link(surface, *kind, cfg.link_k)?);
    }
    // every combination, best joint score first
    let mut combos: Vec<(f64, Vec<&str>, Vec<usize>)> = vec![(1.0, Vec::new(), Vec::new())];
    for cands in &candidates {
        let mut next = Vec::with_capacity(combos.len() * cands.len());
        for (score, ids, picks) in &combos {
            for (i, c) in cands.iter().enumerate() {
                let mut ids = ids.clone();
                ids.push(c.resolved.as_str());
                let mut picks = picks.clone();
                picks.push(i);
                next.push((score * (c.score + 1.0) / 2.0, ids, picks));
            }
        }
        combos = next;
    }
    combos.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut probes = 0;
    let mut variants = Vec::new();
    let mut fallback = None;
    for (score, _, picks) in &combos {
        let choice: BTreeMap<(LabelKind, String), String> = leaves
            .iter()
            .zip(picks)
            .zip(&candidates)
            .map(|((leaf, &i), cands)| (leaf.clone(), cands[i].resolved.clone()))
            .collect();
        let provenance: Vec<LinkCandidate> = picks.iter().zip(&candidates).map(|(&i, c)| c[i].clone()).collect();
        let resolved = substitute(&expr, &choice);
        probes += 1;
        let nonempty = is_probe_nonempty(&resolved, g);
        let core = CalibratedCore {
            expr: resolved,
            provenance,
            nonempty,
            score: *score,
        };
        if nonempty {
            variants.push(core);
            if variants.len() == cfg.keep_variants {
                break;
            }
        } else if fallback.is_none() {
            fallback = Some(core);
        }
    }
    if variants.is_empty() {
        variants.extend(fallback);
    }
    Ok(Calibration {
        variants,
        probes,
        repairs: log,
    })
}

pub fn calibrate(
    draft: &str,
    g: &KnowledgeGraph,
    emb: &dyn Embedder,
    cfg: CalibrationConfig,
) -> Result<Calibration, CalibrationError> {
    calibrate_with(draft, g, &Linker::new(g, emb), cfg)
}

/// Calibration switched off: the draft must parse as is and is executed once.
pub fn identity_calibration(draft: &str, g: &KnowledgeGraph) -> Result<Calibration, CalibrationError> {
    let expr = parse(draft).map_err(|e| CalibrationError::Unrepairable {
        draft: draft.to_string(),
        reason: e.to_string(),
        log: Vec::new(),
    })?;
    let nonempty = is_probe_nonempty(&expr, g);
    Ok(Calibration {
        variants: vec![CalibratedCore {
            expr,
            provenance: Vec::new(),
            nonempty,
            score: 1.0,
        }],
        probes: 1,
        repairs: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;

    fn family() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            [
                Triple::new("L", "father", "P"),
                Triple::new("P", "instance_of", "common_name"),
                Triple::new("L", "instance_of", "common_name"),
            ],
            [
                ("L", LabelKind::Entity, "Ludovico"),
                ("P", LabelKind::Entity, "Tommaso"),
                ("father", LabelKind::Relation, "father"),
                ("instance_of", LabelKind::Relation, "instance of"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn missing_close_paren() {
        let r = correct_syntax("(AND (JOIN (R father) L) (JOIN instance_of common_name)").unwrap();
        assert_eq!(
            r.expr.to_string(),
            "(AND (JOIN (R father) L) (JOIN instance_of common_name))"
        );
        assert!(matches!(r.log[..], [Repair::BalancedParens { .. }]));
    }

    #[test]
    fn interior_missing_paren_is_placed_by_search() {
        let r = correct_syntax("(AND (JOIN (R father) L (JOIN instance_of common_name))").unwrap();
        assert_eq!(
            r.expr.to_string(),
            "(AND (JOIN (R father) L) (JOIN instance_of common_name))"
        );
    }

    #[test]
    fn valid_core_is_a_fixpoint() {
        let r = correct_syntax("(JOIN (R father) L)").unwrap();
        assert!(r.log.is_empty());
    }

    #[test]
    fn surplus_argument_dropped() {
        let r = correct_syntax("(JOIN a b c)").unwrap();
        assert_eq!(r.expr.to_string(), "(JOIN a b)");
        assert_eq!(
            r.log,
            vec![Repair::DroppedArgument {
                function: "JOIN".into(),
                argument: "c".into()
            }]
        );
    }

    #[test]
    fn non_core_snaps_to_skeleton() {
        let r = correct_syntax("(OR (JOIN a b) (JOIN c d))").unwrap();
        assert_eq!(r.expr.to_string(), "(AND (JOIN a b) (JOIN c d))");
        assert!(matches!(
            r.log.last(),
            Some(Repair::SnappedToPattern { pattern: 4, .. })
        ));
        assert!(correct_syntax("(COUNT (OR a b c d e f g h i j k l m n o p q r s t u v))").is_err());
    }

    #[test]
    fn exact_label_ranks_first() {
        let emb = TrigramEmbedder::default();
        let c = link_leaf("Instance_of", LabelKind::Relation, &family(), &emb, 3).unwrap();
        assert_eq!(c[0].resolved, "instance_of");
        assert_eq!(c[0].score, 1.0);
        assert!(c.len() <= 3);
        assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn empty_dictionary() {
        let emb = TrigramEmbedder::default();
        assert_eq!(
            link_leaf("x", LabelKind::Entity, &KnowledgeGraph::new(), &emb, 1),
            Err(CalibrationError::EmptyDictionary(LabelKind::Entity))
        );
    }

    #[test]
    fn embedder_is_unit_length_and_deterministic() {
        let emb = TrigramEmbedder::default();
        let a = emb.embed("father");
        assert_eq!(a.len(), EMBED_DIM);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a, emb.embed("father"));
    }

    #[test]
    fn exact_draft_is_variant_one() {
        let emb = TrigramEmbedder::default();
        let cal = calibrate(
            "(AND (JOIN (R father) L) (JOIN instance_of common_name))",
            &family(),
            &emb,
            CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!(cal.variants.len(), 1);
        assert!(cal.variants[0].nonempty);
        assert_eq!(cal.probes, 1);
        assert!(cal.repairs.is_empty());
        assert_eq!(
            cal.variants[0].expr.to_string(),
            "(AND (JOIN (R father) L) (JOIN instance_of common_name))"
        );
    }

    #[test]
    fn labels_resolve_to_ids() {
        let emb = TrigramEmbedder::default();
        let cal = calibrate(
            "(JOIN (R fathr) Ludovico)",
            &family(),
            &emb,
            CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!(cal.variants[0].expr.to_string(), "(JOIN (R father) L)");
    }

    #[test]
    fn config_is_checked() {
        let cfg = CalibrationConfig {
            link_k: 2,
            keep_variants: 1,
        };
        assert!(matches!(cfg.validate(), Err(CalibrationError::Config(_))));
    }
}
