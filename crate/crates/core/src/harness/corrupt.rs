//! Corruption benchmark for core calibration: gold cores are drafted in
//! surface form, damaged, and handed to the calibrator.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gold::typo;
use super::synth::{gen_synthetic, SynthError, SynthSpec};
use super::table::render;
use crate::calibrate::{calibrate_with, CalibrationConfig, Embedder, Linker};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::sexpr::{Function, Head, SExpr};
use crate::template::decompose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionClass {
    Control,
    ParenDrop,
    ArityInflation,
    LabelTypo,
}

impl CorruptionClass {
    pub const ALL: [CorruptionClass; 4] = [
        CorruptionClass::Control,
        CorruptionClass::ParenDrop,
        CorruptionClass::ArityInflation,
        CorruptionClass::LabelTypo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionClass::Control => "control",
            CorruptionClass::ParenDrop => "paren_drop",
            CorruptionClass::ArityInflation => "arity_inflation",
            CorruptionClass::LabelTypo => "label_typo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub class: CorruptionClass,
    pub gold: SExpr,
    pub draft: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub class: CorruptionClass,
    pub link_k: usize,
    pub keep_variants: usize,
    pub cases: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    pub probes_median: f64,
    pub probes_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub seed: u64,
    pub cases_per_class: usize,
    pub cells: Vec<CellReport>,
    /// Cases where `link_k = 3` probed less than `link_k = 1` at equal
    /// `keep_variants`.
    pub probe_order_violations: usize,
}

impl CorruptionReport {
    pub fn cell(&self, class: CorruptionClass, link_k: usize, keep_variants: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.class == class && c.link_k == link_k && c.keep_variants == keep_variants)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.class.name().to_string(),
                    c.link_k.to_string(),
                    c.keep_variants.to_string(),
                    c.cases.to_string(),
                    format!("{:.4}", c.recovery_rate),
                    format!("{:.1}", c.probes_median),
                    format!("{:.2}", c.probes_mean),
                ]
            })
            .collect();
        let mut out = render(
            &[
                "class",
                "link_k",
                "keep",
                "cases",
                "recovery",
                "probes_p50",
                "probes_mean",
            ],
            &rows,
        );
        out.push_str(&format!("probe order violations: {}\n", self.probe_order_violations));
        out
    }
}

/// Writes a core with labels in place of ids.
pub fn surface_draft(core: &SExpr, g: &KnowledgeGraph) -> SExpr {
    core.map_leaves(&mut |leaf| match leaf {
        SExpr::Entity(id) => SExpr::entity(g.entity_label(&EntityId::new(id.clone())).replace(' ', "_")),
        SExpr::Relation(id) => SExpr::relation(g.relation_label(&RelationId::new(id.clone())).replace(' ', "_")),
        other => other.clone(),
    })
}

fn drop_paren(text: &str, rng: &mut ChaCha8Rng) -> String {
    let positions: Vec<usize> = text
        .char_indices()
        .filter(|(_, c)| matches!(c, '(' | ')'))
        .map(|(i, _)| i)
        .collect();
    // the outermost pair is left alone so the draft still reads as a call
    let inner = &positions[1..positions.len() - 1];
    let Some(&at) = inner.choose(rng) else {
        return text[..text.len() - 1].to_string();
    };
    format!("{}{}", &text[..at], &text[at + 1..])
}

fn fixed_arity(f: Function) -> bool {
    matches!(f, Function::Join | Function::R | Function::IsTrue)
}

fn inflate(e: &SExpr, target: usize, extra: &SExpr, seen: &mut usize) -> SExpr {
    match e {
        SExpr::Call { head, args } => {
            let here = matches!(head, Head::Func(f) if fixed_arity(*f));
            let mut args: Vec<SExpr> = args.iter().map(|a| inflate(a, target, extra, seen)).collect();
            if here {
                if *seen == target {
                    args.push(extra.clone());
                }
                *seen += 1;
            }
            SExpr::Call {
                head: head.clone(),
                args,
            }
        }
        leaf => leaf.clone(),
    }
}

fn count_fixed(e: &SExpr) -> usize {
    let mut n = 0;
    e.walk(&mut |x| {
        if x.function().is_some_and(fixed_arity) {
            n += 1;
        }
    });
    n
}

fn corrupt(class: CorruptionClass, draft: &SExpr, rng: &mut ChaCha8Rng) -> String {
    match class {
        CorruptionClass::Control => draft.to_string(),
        CorruptionClass::ParenDrop => drop_paren(&draft.to_string(), rng),
        CorruptionClass::ArityInflation => {
            let leaves: Vec<SExpr> = {
                let mut v = Vec::new();
                draft.walk(&mut |x| {
                    if matches!(x, SExpr::Entity(_)) {
                        v.push(x.clone());
                    }
                });
                v
            };
            let extra = leaves.choose(rng).cloned().unwrap_or_else(|| SExpr::entity("extra"));
            let target = rng.gen_range(0..count_fixed(draft).max(1));
            inflate(draft, target, &extra, &mut 0).to_string()
        }
        CorruptionClass::LabelTypo => {
            let mut leaves = Vec::new();
            draft.walk(&mut |x| {
                if let SExpr::Entity(s) | SExpr::Relation(s) = x {
                    leaves.push(s.clone());
                }
            });
            let victim = leaves.choose(rng).cloned().unwrap_or_default();
            let mut damaged = typo(&victim, rng);
            if rng.gen_bool(0.5) {
                damaged = typo(&damaged, rng);
            }
            let mut done = false;
            draft
                .map_leaves(&mut |leaf| match leaf {
                    SExpr::Entity(s) if !done && *s == victim => {
                        done = true;
                        SExpr::entity(damaged.clone())
                    }
                    SExpr::Relation(s) if !done && *s == victim => {
                        done = true;
                        SExpr::relation(damaged.clone())
                    }
                    other => other.clone(),
                })
                .to_string()
        }
    }
}

/// The synthetic suite used by default: cores of generated gold forms.
pub fn default_suite(seed: u64) -> Result<(KnowledgeGraph, Vec<SExpr>), SynthError> {
    let spec = SynthSpec {
        n_entities: 150,
        n_relations: 8,
        n_dialogs: 40,
        turns_per_dialog: 6,
        ..SynthSpec::default()
    };
    let set = gen_synthetic(seed, &spec)?;
    let mut cores: Vec<SExpr> = Vec::new();
    for t in set.dialogs.turns() {
        for c in decompose(t.gold_sexpr.as_ref().expect("synthetic turns carry gold"))
            .1
            .variables
            .into_values()
        {
            if !cores.contains(&c) {
                cores.push(c);
            }
        }
    }
    Ok((set.graph, cores))
}

pub fn make_cases(seed: u64, g: &KnowledgeGraph, cores: &[SExpr], per_class: usize) -> Vec<BenchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for class in CorruptionClass::ALL {
        for _ in 0..per_class {
            let gold = cores.choose(&mut rng).expect("nonempty core pool").clone();
            let draft = corrupt(class, &surface_draft(&gold, g), &mut rng);
            out.push(BenchCase { class, gold, draft });
        }
    }
    out
}

fn median(xs: &mut [usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_unstable();
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m] as f64
    } else {
        (xs[m - 1] + xs[m]) as f64 / 2.0
    }
}

/// Runs every case under each `(link_k, keep_variants)` cell. A case is
/// recovered when a returned variant equals the gold core.
pub fn run_cases(
    cases: &[BenchCase],
    g: &KnowledgeGraph,
    emb: &dyn Embedder,
    seed: u64,
    per_class: usize,
) -> CorruptionReport {
    let linker = Linker::new(g, emb);
    let settings = [(1, 1), (3, 1), (1, 3), (3, 3)];
    let mut probes: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut cells = Vec::new();
    for (link_k, keep_variants) in settings {
        let cfg = CalibrationConfig { link_k, keep_variants };
        let mut per_class: BTreeMap<CorruptionClass, (usize, usize, Vec<usize>)> = BTreeMap::new();
        let all = probes.entry((link_k, keep_variants)).or_default();
        for case in cases {
            let (n, hit, ps) = per_class.entry(case.class).or_default();
            *n += 1;
            match calibrate_with(&case.draft, g, &linker, cfg) {
                Ok(c) => {
                    if c.variants.iter().any(|v| v.nonempty && v.expr == case.gold) {
                        *hit += 1;
                    }
                    ps.push(c.probes);
                    all.push(c.probes);
                }
                Err(_) => {
                    ps.push(0);
                    all.push(0);
                }
            }
        }
        for (class, (n, hit, mut ps)) in per_class {
            cells.push(CellReport {
                class,
                link_k,
                keep_variants,
                cases: n,
                recovered: hit,
                recovery_rate: if n == 0 { 0.0 } else { hit as f64 / n as f64 },
                probes_median: median(&mut ps),
                probes_mean: if ps.is_empty() {
                    0.0
                } else {
                    ps.iter().sum::<usize>() as f64 / ps.len() as f64
                },
            });
        }
    }
    cells.sort_by_key(|c| (c.class, c.link_k, c.keep_variants));
    let mut violations = 0;
    for keep in [1, 3] {
        let (a, b) = (&probes[&(1, keep)], &probes[&(3, keep)]);
        violations += a.iter().zip(b).filter(|(k1, k3)| k3 < k1).count();
    }
    CorruptionReport {
        seed,
        cases_per_class: per_class,
        cells,
        probe_order_violations: violations,
    }
}

pub fn run_corruption_bench(seed: u64, per_class: usize, emb: &dyn Embedder) -> Result<CorruptionReport, SynthError> {
    let (g, cores) = default_suite(seed)?;
    let cases = make_cases(seed, &g, &cores, per_class);
    Ok(run_cases(&cases, &g, emb, seed, per_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::TrigramEmbedder;
    use crate::sexpr::parse;

    #[test]
    fn corruptions_change_the_draft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = parse("(AND (JOIN mentor (JOIN instance_of city)) (JOIN instance_of person))").unwrap();
        for class in [
            CorruptionClass::ParenDrop,
            CorruptionClass::ArityInflation,
            CorruptionClass::LabelTypo,
        ] {
            for _ in 0..20 {
                assert_ne!(corrupt(class, &d, &mut rng), d.to_string(), "{class:?}");
            }
        }
        let dropped = corrupt(CorruptionClass::ParenDrop, &d, &mut rng);
        assert_eq!(dropped.len(), d.to_string().len() - 1);
    }

    #[test]
    fn control_fully_recovers() {
        let report = run_corruption_bench(4, 20, &TrigramEmbedder::default()).unwrap();
        let c = report.cell(CorruptionClass::Control, 1, 1).unwrap();
        assert_eq!(c.recovery_rate, 1.0);
        assert_eq!(report.probe_order_violations, 0);
    }
}
