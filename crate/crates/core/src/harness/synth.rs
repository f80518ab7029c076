//! Seeded synthetic graphs and dialogs with verified gold answers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dialog::{Dialog, DialogFile, GoldAnswer, GoldTurn};
use crate::eval::{eval, EvalError, EvalResult};
use crate::kg::{EntityId, KnowledgeGraph, LabelKind, RelationId, Triple};
use crate::oracle::brute_force_eval;
use crate::sexpr::{Function, SExpr};
use crate::template::QuestionType;

const TYPE_NOUNS: [&str; 8] = [
    "city", "person", "company", "river", "novel", "team", "school", "museum",
];
const RELATION_NOUNS: [&str; 12] = [
    "mentor",
    "founder",
    "sponsor",
    "neighbor",
    "rival",
    "partner",
    "supplier",
    "owner",
    "advisor",
    "editor",
    "patron",
    "successor",
];
const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "m"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_dialogs: usize,
    pub turns_per_dialog: usize,
    /// Relative weight of each question type; missing types get none.
    pub type_mix: BTreeMap<QuestionType, u32>,
    /// Chance that a simple turn after another simple turn is asked as a
    /// coreference or ellipsis follow-up.
    pub followup_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 120,
            n_relations: 6,
            n_dialogs: 20,
            turns_per_dialog: 6,
            type_mix: QuestionType::ALL.iter().map(|t| (*t, 1)).collect(),
            followup_rate: 0.4,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation spec: {0}")]
    Spec(String),
    #[error("gold evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n_types = type_count(self.n_entities);
        if self.n_entities < n_types + 4 {
            return Err(SynthError::Spec(format!("need at least {} entities", n_types + 4)));
        }
        if self.n_relations == 0 || self.n_dialogs == 0 || self.turns_per_dialog == 0 {
            return Err(SynthError::Spec("relations, dialogs and turns must be positive".into()));
        }
        if self.type_mix.values().all(|w| *w == 0) {
            return Err(SynthError::Spec("type mix has no positive weight".into()));
        }
        if !(0.0..=1.0).contains(&self.followup_rate) {
            return Err(SynthError::Spec("followup_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Per-type turn counts, proportional to the weights by largest remainder.
    pub fn allocation(&self) -> BTreeMap<QuestionType, usize> {
        let total = self.n_dialogs * self.turns_per_dialog;
        let weight_sum: u64 = self.type_mix.values().map(|w| u64::from(*w)).sum();
        let mut out = BTreeMap::new();
        let mut rems = Vec::new();
        let mut used = 0;
        for (t, w) in &self.type_mix {
            let exact = total as u64 * u64::from(*w);
            let base = (exact / weight_sum) as usize;
            used += base;
            out.insert(*t, base);
            rems.push((exact % weight_sum, *t));
        }
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, t) in rems.into_iter().take(total - used) {
            *out.get_mut(&t).expect("allocated type") += 1;
        }
        out
    }
}

fn type_count(n_entities: usize) -> usize {
    (n_entities / 20).clamp(2, TYPE_NOUNS.len())
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub graph: KnowledgeGraph,
    pub dialogs: DialogFile,
}

impl SyntheticSet {
    /// Triple file, label file and dialog JSON, in that order.
    pub fn files(&self) -> (String, String, String) {
        let (triples, labels) = self.graph.to_files();
        (triples, labels, self.dialogs.to_json())
    }
}

struct World {
    graph: KnowledgeGraph,
    types: Vec<String>,
    relations: Vec<(String, usize, usize)>,
    by_type: Vec<Vec<String>>,
}

fn name(rng: &mut ChaCha8Rng) -> String {
    let mut word = || {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("onsets"));
            w.push_str(VOWELS.choose(rng).expect("vowels"));
        }
        w.push_str(CODAS.choose(rng).expect("codas"));
        let mut c = w.chars();
        let first = c.next().expect("nonempty").to_ascii_uppercase();
        format!("{first}{}", c.as_str())
    };
    format!("{} {}", word(), word())
}

fn build_world(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> World {
    let n_types = type_count(spec.n_entities);
    let types: Vec<String> = (0..n_types).map(|k| format!("type_{k}")).collect();
    let mut triples = Vec::new();
    let mut labels: Vec<(String, LabelKind, String)> = Vec::new();
    for (k, t) in types.iter().enumerate() {
        labels.push((t.clone(), LabelKind::Entity, TYPE_NOUNS[k].to_string()));
    }
    let mut by_type: Vec<Vec<String>> = vec![Vec::new(); n_types];
    let mut used_names = BTreeSet::new();
    for i in 0..spec.n_entities - n_types {
        let id = format!("e{i}");
        let k = i % n_types;
        triples.push(Triple::new(&id, "instance_of", &types[k]));
        let mut label = name(rng);
        while !used_names.insert(label.clone()) {
            label = name(rng);
        }
        labels.push((id.clone(), LabelKind::Entity, label));
        by_type[k].push(id);
    }
    let mut relations = Vec::new();
    for j in 0..spec.n_relations {
        let id = format!("r{j}");
        let domain = rng.gen_range(0..n_types);
        let range = rng.gen_range(0..n_types);
        let noun = RELATION_NOUNS
            .get(j)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("link {j}"));
        labels.push((id.clone(), LabelKind::Relation, noun));
        for s in &by_type[domain] {
            if !rng.gen_bool(0.8) {
                continue;
            }
            let k = rng.gen_range(1..=4);
            let objects: Vec<&String> = by_type[range].iter().filter(|o| *o != s).collect();
            for o in objects.choose_multiple(rng, k) {
                triples.push(Triple::new(s, &id, o));
            }
        }
        relations.push((id, domain, range));
    }
    labels.push(("instance_of".into(), LabelKind::Relation, "instance of".into()));
    let graph = KnowledgeGraph::from_parts(triples, labels.iter().map(|(id, k, l)| (id.as_str(), *k, l.as_str())))
        .expect("synthetic graph is well formed");
    World {
        graph,
        types,
        relations,
        by_type,
    }
}

fn gold_of(e: &SExpr, g: &KnowledgeGraph) -> Result<EvalResult, SynthError> {
    match brute_force_eval(e, g) {
        Err(EvalError::TooLarge { .. }) => Ok(eval(e, g)?),
        other => Ok(other?),
    }
}

struct Instance {
    q: String,
    resolved: Option<String>,
    sexpr: SExpr,
    /// Forward simple questions can be followed by an ellipsis turn.
    topic: Option<(String, String)>,
}

const COMPARATIVES: [(Function, &str); 5] = [
    (Function::Gt, "more than"),
    (Function::Lt, "fewer than"),
    (Function::Ge, "at least"),
    (Function::Le, "at most"),
    (Function::Eq, "exactly"),
];

impl World {
    fn label(&self, id: &str) -> String {
        self.graph.entity_label(&EntityId::new(id)).to_string()
    }

    fn rel_label(&self, id: &str) -> String {
        self.graph.relation_label(&RelationId::new(id)).to_string()
    }

    fn objects(&self, s: &str, r: &str) -> Vec<String> {
        self.graph
            .objects_of(&EntityId::new(s), &RelationId::new(r))
            .iter()
            .map(|e| e.as_str().to_string())
            .collect()
    }

    fn subjects_with(&self, r: &str, domain: usize) -> Vec<&String> {
        self.by_type[domain]
            .iter()
            .filter(|s| !self.objects(s, r).is_empty())
            .collect()
    }

    fn forward(r: &str, s: &str) -> SExpr {
        SExpr::join(SExpr::call(Function::R, vec![SExpr::relation(r)]), SExpr::entity(s))
    }

    fn grouped_core(&self, r: &str, domain: usize, range: usize) -> SExpr {
        let of_type = |k: usize| SExpr::join(SExpr::relation("instance_of"), SExpr::entity(self.types[k].clone()));
        SExpr::and(vec![SExpr::join(SExpr::relation(r), of_type(range)), of_type(domain)])
    }

    fn usable_relations(&self) -> Vec<&(String, usize, usize)> {
        self.relations
            .iter()
            .filter(|(r, d, _)| !self.subjects_with(r, *d).is_empty())
            .collect()
    }

    fn simple(&self, rng: &mut ChaCha8Rng) -> Option<Instance> {
        let (r, d, _) = *self.usable_relations().choose(rng)?;
        let subjects = self.subjects_with(r, *d);
        let s = *subjects.choose(rng)?;
        let rl = self.rel_label(r);
        match rng.gen_range(0..4) {
            0 => {
                let o = self.objects(s, r).choose(rng)?.clone();
                Some(Instance {
                    q: format!("Whose {rl} is {}?", self.label(&o)),
                    resolved: None,
                    sexpr: SExpr::join(SExpr::relation(r.clone()), SExpr::entity(o)),
                    topic: None,
                })
            }
            1 if subjects.len() > 1 => {
                let s2 = *subjects.iter().filter(|x| **x != s).collect::<Vec<_>>().choose(rng)?;
                Some(Instance {
                    q: format!("What is the {rl} of {} or {}?", self.label(s), self.label(s2)),
                    resolved: None,
                    sexpr: SExpr::call(Function::Or, vec![Self::forward(r, s), Self::forward(r, s2)]),
                    topic: None,
                })
            }
            _ => Some(Instance {
                q: format!("What is the {rl} of {}?", self.label(s)),
                resolved: None,
                sexpr: Self::forward(r, s),
                topic: Some((r.clone(), s.clone())),
            }),
        }
    }

    fn ellipsis(&self, rng: &mut ChaCha8Rng, r: &str, prev: &str) -> Option<Instance> {
        let (_, d, _) = self.relations.iter().find(|(x, _, _)| x == r)?;
        let others: Vec<&String> = self.subjects_with(r, *d).into_iter().filter(|s| *s != prev).collect();
        let s = *others.choose(rng)?;
        Some(Instance {
            q: format!("And what about {}?", self.label(s)),
            resolved: Some(format!("What is the {} of {}?", self.rel_label(r), self.label(s))),
            sexpr: Self::forward(r, s),
            topic: Some((r.to_string(), s.clone())),
        })
    }

    fn coreference(&self, rng: &mut ChaCha8Rng, referent: &str) -> Option<Instance> {
        let rels: Vec<&String> = self
            .relations
            .iter()
            .map(|(r, _, _)| r)
            .filter(|r| !self.objects(referent, r).is_empty())
            .collect();
        let r = *rels.choose(rng)?;
        let rl = self.rel_label(r);
        Some(Instance {
            q: format!("What is the {rl} of that one?"),
            resolved: Some(format!("What is the {rl} of {}?", self.label(referent))),
            sexpr: Self::forward(r, referent),
            topic: Some((r.clone(), referent.to_string())),
        })
    }

    fn verify(&self, rng: &mut ChaCha8Rng) -> Option<Instance> {
        let (r, d, range) = *self.usable_relations().choose(rng)?;
        let s = *self.subjects_with(r, *d).choose(rng)?;
        let objects = self.objects(s, r);
        let o = if rng.gen_bool(0.5) {
            objects.choose(rng)?.clone()
        } else {
            let others: Vec<&String> = self.by_type[*range].iter().filter(|o| !objects.contains(o)).collect();
            match others.choose(rng) {
                Some(o) => (*o).clone(),
                None => objects.choose(rng)?.clone(),
            }
        };
        let fact = SExpr::call(
            Function::IsTrue,
            vec![
                SExpr::entity(s.clone()),
                SExpr::relation(r.clone()),
                SExpr::entity(o.clone()),
            ],
        );
        Some(Instance {
            q: format!("Is {} the {} of {}?", self.label(&o), self.rel_label(r), self.label(s)),
            resolved: None,
            sexpr: SExpr::call(Function::All, vec![fact]),
            topic: None,
        })
    }

    fn count(&self, rng: &mut ChaCha8Rng) -> Option<Instance> {
        let (r, d, _) = *self.usable_relations().choose(rng)?;
        let s = *self.subjects_with(r, *d).choose(rng)?;
        Some(Instance {
            q: format!("How many {} does {} have?", self.rel_label(r), self.label(s)),
            resolved: None,
            sexpr: SExpr::call(Function::Count, vec![Self::forward(r, s)]),
            topic: None,
        })
    }

    fn comparison(&self, rng: &mut ChaCha8Rng, counted: bool) -> Option<Instance> {
        let (r, d, range) = *self.usable_relations().choose(rng)?;
        let grouped = SExpr::call(Function::GroupCount, vec![self.grouped_core(r, *d, *range)]);
        let counts: Vec<u64> = match eval(&grouped, &self.graph).ok()? {
            EvalResult::GroupedCounts(m) => m.values().copied().collect(),
            _ => return None,
        };
        let (f, word) = *COMPARATIVES.choose(rng)?;
        let pivot = *counts.choose(rng)?;
        let n = match f {
            Function::Gt => pivot.saturating_sub(1),
            Function::Lt => pivot + 1,
            _ => pivot,
        };
        let cmp = SExpr::call(f, vec![grouped, SExpr::Number(n)]);
        let (t1, t2) = (self.label(&self.types[*d]), self.label(&self.types[*range]));
        let rl = self.rel_label(r);
        let (q, sexpr) = if counted {
            (
                format!("How many {t1} have a {rl} relation to {word} {n} {t2}?"),
                SExpr::call(Function::Count, vec![cmp]),
            )
        } else {
            (format!("Which {t1} have a {rl} relation to {word} {n} {t2}?"), cmp)
        };
        Some(Instance {
            q,
            resolved: None,
            sexpr,
            topic: None,
        })
    }

    fn optimize(&self, rng: &mut ChaCha8Rng) -> Option<Instance> {
        let (r, d, range) = *self.usable_relations().choose(rng)?;
        let (f, word) = *[(Function::ArgMax, "the most"), (Function::ArgMin, "the least")].choose(rng)?;
        let grouped = SExpr::call(Function::GroupCount, vec![self.grouped_core(r, *d, *range)]);
        let (t1, t2) = (self.label(&self.types[*d]), self.label(&self.types[*range]));
        Some(Instance {
            q: format!("Which {t1} has a {} relation to {word} {t2}?", self.rel_label(r)),
            resolved: None,
            sexpr: SExpr::call(f, vec![grouped]),
            topic: None,
        })
    }
}

/// Deterministic graph and dialogs for `seed`. Gold answers come from the
/// exhaustive evaluator whenever the graph is small enough for it.
pub fn gen_synthetic(seed: u64, spec: &SynthSpec) -> Result<SyntheticSet, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = build_world(&mut rng, spec);
    let mut plan: Vec<QuestionType> = spec
        .allocation()
        .into_iter()
        .flat_map(|(t, n)| std::iter::repeat_n(t, n))
        .collect();
    plan.shuffle(&mut rng);

    let mut dialogs = Vec::with_capacity(spec.n_dialogs);
    for chunk in plan.chunks(spec.turns_per_dialog) {
        let mut turns: Vec<GoldTurn> = Vec::new();
        let mut prev_topic: Option<(String, String)> = None;
        let mut prev_first: Option<String> = None;
        for &qtype in chunk {
            let mut inst = None;
            for _ in 0..64 {
                inst = match qtype {
                    QuestionType::Simple => {
                        let follow = rng.gen_bool(spec.followup_rate);
                        match (&prev_topic, &prev_first) {
                            (Some((r, s)), _) if follow && rng.gen_bool(0.5) => world.ellipsis(&mut rng, r, s),
                            (_, Some(first)) if follow => world.coreference(&mut rng, first),
                            _ => world.simple(&mut rng),
                        }
                    }
                    QuestionType::Verify => world.verify(&mut rng),
                    QuestionType::Count => world.count(&mut rng),
                    QuestionType::Compare => world.comparison(&mut rng, false),
                    QuestionType::CompareAndCount => world.comparison(&mut rng, true),
                    QuestionType::Optimize => world.optimize(&mut rng),
                };
                let nonempty = inst
                    .as_ref()
                    .is_some_and(|i| eval(&i.sexpr, &world.graph).is_ok_and(|r| r.is_nonempty()));
                if nonempty {
                    break;
                }
                inst = None;
            }
            let Some(inst) = inst else {
                return Err(SynthError::Spec(format!("graph too sparse for {qtype} questions")));
            };
            let answer = gold_of(&inst.sexpr, &world.graph)?;
            let gold = GoldAnswer::from_result(&answer)
                .ok_or_else(|| SynthError::Spec(format!("unsupported gold type for {}", inst.sexpr)))?;
            prev_first = answer
                .entities()
                .and_then(|s| s.iter().next())
                .map(|e| e.as_str().to_string());
            prev_topic = inst.topic;
            turns.push(GoldTurn {
                q: inst.q,
                gold,
                qtype,
                gold_sexpr: Some(inst.sexpr),
                resolved: inst.resolved,
            });
        }
        dialogs.push(Dialog { turns });
    }
    Ok(SyntheticSet {
        graph: world.graph,
        dialogs: DialogFile { dialogs },
    })
}
