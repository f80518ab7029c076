//! Denotational semantics of S-expressions over a [`KnowledgeGraph`].
//!
//! Grouped counting: `GROUP_COUNT` takes a core whose first conjunct (or the
//! whole core, without `AND`) is the primary join `(JOIN r X)` or
//! `(JOIN (R r) X)`. The group keys are the core's answers; a key's count is
//! the number of distinct members of `X` the primary join relates it to.
//! Keys with no witnesses are omitted, so `(LT gc n)` never returns them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::sexpr::{is_core, type_check, Function, Head, SExpr, TypeError, ValueType};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum EvalResult {
    EntitySet(BTreeSet<EntityId>),
    ValueSet(BTreeSet<u64>),
    PairSet(BTreeSet<(EntityId, EntityId)>),
    GroupedCounts(BTreeMap<EntityId, u64>),
    Boolean(bool),
    Integer(u64),
}

impl EvalResult {
    pub fn value_type(&self) -> ValueType {
        match self {
            EvalResult::EntitySet(_) => ValueType::EntitySet,
            EvalResult::ValueSet(_) => ValueType::ValueSet,
            EvalResult::PairSet(_) => ValueType::PairSet,
            EvalResult::GroupedCounts(_) => ValueType::GroupedCounts,
            EvalResult::Boolean(_) => ValueType::Boolean,
            EvalResult::Integer(_) => ValueType::Integer,
        }
    }

    /// Whether a set-like result has members. Scalars count as answers.
    pub fn is_nonempty(&self) -> bool {
        match self {
            EvalResult::EntitySet(s) => !s.is_empty(),
            EvalResult::ValueSet(s) => !s.is_empty(),
            EvalResult::PairSet(s) => !s.is_empty(),
            EvalResult::GroupedCounts(m) => !m.is_empty(),
            EvalResult::Boolean(_) | EvalResult::Integer(_) => true,
        }
    }

    pub fn entities(&self) -> Option<&BTreeSet<EntityId>> {
        match self {
            EvalResult::EntitySet(s) => Some(s),
            _ => None,
        }
    }

    /// Stable single-line rendering; entity sets are sorted by id.
    pub fn render(&self) -> String {
        match self {
            EvalResult::EntitySet(s) => {
                let ids: Vec<&str> = s.iter().map(EntityId::as_str).collect();
                format!("{{{}}}", ids.join(", "))
            }
            EvalResult::ValueSet(s) => {
                let vs: Vec<String> = s.iter().map(u64::to_string).collect();
                format!("{{{}}}", vs.join(", "))
            }
            EvalResult::PairSet(s) => {
                let ps: Vec<String> = s.iter().map(|(a, b)| format!("({a}, {b})")).collect();
                format!("{{{}}}", ps.join(", "))
            }
            EvalResult::GroupedCounts(m) => {
                let ps: Vec<String> = m.iter().map(|(k, v)| format!("{k}: {v}")).collect();
                format!("{{{}}}", ps.join(", "))
            }
            EvalResult::Boolean(b) => b.to_string(),
            EvalResult::Integer(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("unresolved reference `{0}`")]
    Unresolved(String),
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("graph has {entities} entities; the exhaustive evaluator accepts at most {limit}")]
    TooLarge { entities: usize, limit: usize },
}

/// Direction of the primary join of a grouped core.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `(JOIN r X)`: key is the subject, witness the object.
    Forward,
    /// `(JOIN (R r) X)`: key is the object, witness the subject.
    Reverse,
}

/// A grouped core split into its primary join and remaining conjuncts.
#[derive(Clone, Debug)]
pub struct GroupedCore<'a> {
    pub relation: &'a str,
    pub direction: Direction,
    pub inner: &'a SExpr,
    pub constraints: Vec<&'a SExpr>,
}

impl GroupedCore<'_> {
    /// Whether `key` and `witness` are related by the primary join.
    pub fn links(&self, g: &KnowledgeGraph, key: &EntityId, witness: &EntityId) -> bool {
        let r = RelationId::new(self.relation);
        match self.direction {
            Direction::Forward => g.has_triple(key, &r, witness),
            Direction::Reverse => g.has_triple(witness, &r, key),
        }
    }
}

fn primary_join(e: &SExpr) -> Option<(&str, Direction, &SExpr)> {
    if e.function() != Some(Function::Join) {
        return None;
    }
    let args = e.args();
    match &args[0] {
        SExpr::Relation(r) => Some((r, Direction::Forward, &args[1])),
        rev if rev.function() == Some(Function::R) => match &rev.args()[0] {
            SExpr::Relation(r) => Some((r, Direction::Reverse, &args[1])),
            _ => None,
        },
        _ => None,
    }
}

/// Splits the argument of `GROUP_COUNT`; errors when it is not a core with a
/// join as its primary conjunct.
pub fn decompose_grouped(core: &SExpr) -> Result<GroupedCore<'_>, EvalError> {
    if !is_core(core) {
        return Err(EvalError::Semantic(format!(
            "GROUP_COUNT needs a core argument, found `{core}`"
        )));
    }
    let (primary, constraints) = if core.function() == Some(Function::And) {
        (&core.args()[0], core.args()[1..].iter().collect())
    } else {
        (core, Vec::new())
    };
    let (relation, direction, inner) = primary_join(primary)
        .ok_or_else(|| EvalError::Semantic(format!("grouped core `{core}` lacks a primary JOIN")))?;
    Ok(GroupedCore {
        relation,
        direction,
        inner,
        constraints,
    })
}

fn leaf_error(e: &SExpr) -> EvalError {
    match e {
        SExpr::Placeholder(p) => EvalError::Unresolved(p.clone()),
        SExpr::Call {
            head: Head::Slot(s), ..
        } => EvalError::Unresolved(s.clone()),
        other => EvalError::Semantic(format!("ill-typed node `{other}`")),
    }
}

/// Evaluates `e` over `g` using the graph indexes.
pub fn eval(e: &SExpr, g: &KnowledgeGraph) -> Result<EvalResult, EvalError> {
    if let Some(p) = first_unresolved(e) {
        return Err(EvalError::Unresolved(p));
    }
    type_check(e)?;
    Indexed { g }.eval(e)
}

pub(crate) fn first_unresolved(e: &SExpr) -> Option<String> {
    e.placeholders().into_iter().next()
}

impl Indexed<'_> {
    fn set(&self, e: &SExpr) -> Result<BTreeSet<EntityId>, EvalError> {
        match self.eval(e)? {
            EvalResult::EntitySet(s) => Ok(s),
            other => Err(EvalError::Semantic(format!(
                "expected an entity set from `{e}`, found {}",
                other.value_type()
            ))),
        }
    }

    fn counts(&self, e: &SExpr) -> Result<BTreeMap<EntityId, u64>, EvalError> {
        match self.eval(e)? {
            EvalResult::GroupedCounts(m) => Ok(m),
            other => Err(EvalError::Semantic(format!(
                "expected grouped counts from `{e}`, found {}",
                other.value_type()
            ))),
        }
    }

    fn group_count(&self, core: &SExpr) -> Result<BTreeMap<EntityId, u64>, EvalError> {
        let gc = decompose_grouped(core)?;
        let witnesses = self.set(gc.inner)?;
        let keys = match gc.direction {
            Direction::Forward => self.join_forward(gc.relation, &witnesses),
            Direction::Reverse => self.join_reverse(gc.relation, &witnesses),
        };
        let mut keys = keys;
        for c in &gc.constraints {
            let allowed = self.set(c)?;
            keys.retain(|k| allowed.contains(k));
        }
        Ok(self.grouped(&gc, &keys, &witnesses))
    }

    /// Reference count of an entity set under a grouped expression: the
    /// number of witnesses the primary join relates to any member of `set`,
    /// summed across `GROUP_SUM` branches.
    fn reference(&self, grouped: &SExpr, set: &BTreeSet<EntityId>) -> Result<u64, EvalError> {
        match grouped.function() {
            Some(Function::GroupCount) => {
                let gc = decompose_grouped(&grouped.args()[0])?;
                let witnesses = self.set(gc.inner)?;
                let g = self.g;
                Ok(witnesses
                    .iter()
                    .filter(|w| set.iter().any(|s| gc.links(g, s, w)))
                    .count() as u64)
            }
            Some(Function::GroupSum) => {
                Ok(self.reference(&grouped.args()[0], set)? + self.reference(&grouped.args()[1], set)?)
            }
            _ => Err(EvalError::Semantic(format!(
                "cannot compare `{grouped}` against an entity set"
            ))),
        }
    }

    fn eval(&self, e: &SExpr) -> Result<EvalResult, EvalError> {
        use Function::*;
        let (f, args) = match e {
            SExpr::Entity(id) => {
                return Ok(EvalResult::EntitySet(BTreeSet::from([EntityId::new(id.as_str())])));
            }
            SExpr::Number(n) => return Ok(EvalResult::Integer(*n)),
            SExpr::Call {
                head: Head::Func(f),
                args,
            } => (*f, args),
            other => return Err(leaf_error(other)),
        };
        Ok(match f {
            Join => {
                let inner = self.set(&args[1])?;
                match &args[0] {
                    SExpr::Relation(r) => EvalResult::EntitySet(self.join_forward(r, &inner)),
                    rev => match rev.args().first() {
                        Some(SExpr::Relation(r)) if rev.function() == Some(R) => {
                            EvalResult::EntitySet(self.join_reverse(r, &inner))
                        }
                        _ => return Err(leaf_error(rev)),
                    },
                }
            }
            R => match &args[0] {
                SExpr::Relation(r) => EvalResult::PairSet(self.pairs(r)),
                other => return Err(leaf_error(other)),
            },
            And => {
                let mut acc = self.set(&args[0])?;
                for a in &args[1..] {
                    let s = self.set(a)?;
                    acc.retain(|x| s.contains(x));
                }
                EvalResult::EntitySet(acc)
            }
            Or => {
                let mut acc = BTreeSet::new();
                for a in args {
                    acc.extend(self.set(a)?);
                }
                EvalResult::EntitySet(acc)
            }
            Diff => {
                let mut a = self.set(&args[0])?;
                let b = self.set(&args[1])?;
                a.retain(|x| !b.contains(x));
                EvalResult::EntitySet(a)
            }
            Values => {
                if args.iter().all(|a| matches!(a, SExpr::Number(_))) {
                    EvalResult::ValueSet(
                        args.iter()
                            .filter_map(|a| match a {
                                SExpr::Number(n) => Some(*n),
                                _ => None,
                            })
                            .collect(),
                    )
                } else {
                    let mut s = BTreeSet::new();
                    for a in args {
                        match a {
                            SExpr::Entity(id) => {
                                s.insert(EntityId::new(id.as_str()));
                            }
                            other => return Err(leaf_error(other)),
                        }
                    }
                    EvalResult::EntitySet(s)
                }
            }
            IsTrue => match (&args[0], &args[1], &args[2]) {
                (SExpr::Entity(s), SExpr::Relation(p), SExpr::Entity(o)) => EvalResult::Boolean(self.holds(s, p, o)),
                _ => return Err(EvalError::Semantic(format!("malformed `{e}`"))),
            },
            All => {
                let mut all = true;
                for a in args {
                    match self.eval(a)? {
                        EvalResult::Boolean(b) => all &= b,
                        other => return Err(EvalError::Semantic(format!("ALL over {}", other.value_type()))),
                    }
                }
                EvalResult::Boolean(all)
            }
            Count => EvalResult::Integer(match self.eval(&args[0])? {
                EvalResult::EntitySet(s) => s.len() as u64,
                EvalResult::ValueSet(s) => s.len() as u64,
                EvalResult::GroupedCounts(m) => m.len() as u64,
                other => return Err(EvalError::Semantic(format!("COUNT over {}", other.value_type()))),
            }),
            Distinct => EvalResult::EntitySet(self.set(&args[0])?),
            GroupCount => EvalResult::GroupedCounts(self.group_count(&args[0])?),
            GroupSum => {
                let mut a = self.counts(&args[0])?;
                for (k, v) in self.counts(&args[1])? {
                    *a.entry(k).or_insert(0) += v;
                }
                EvalResult::GroupedCounts(a)
            }
            ArgMax | ArgMin => {
                let gc = self.counts(&args[0])?;
                let best = if f == ArgMax {
                    gc.values().max()
                } else {
                    gc.values().min()
                };
                EvalResult::EntitySet(match best {
                    Some(&b) => gc.iter().filter(|(_, &v)| v == b).map(|(k, _)| k.clone()).collect(),
                    None => BTreeSet::new(),
                })
            }
            Lt | Le | Gt | Ge | Eq => {
                let gc = self.counts(&args[0])?;
                let threshold = match &args[1] {
                    SExpr::Number(n) => *n,
                    other => {
                        let set = self.set(other)?;
                        self.reference(&args[0], &set)?
                    }
                };
                EvalResult::EntitySet(
                    gc.into_iter()
                        .filter(|(_, v)| compare(f, *v, threshold))
                        .map(|(k, _)| k)
                        .collect(),
                )
            }
        })
    }
}

/// Applies a comparison function to a count and a threshold.
pub fn compare(f: Function, value: u64, threshold: u64) -> bool {
    match f {
        Function::Lt => value < threshold,
        Function::Le => value <= threshold,
        Function::Gt => value > threshold,
        Function::Ge => value >= threshold,
        Function::Eq => value == threshold,
        _ => false,
    }
}

struct Indexed<'g> {
    g: &'g KnowledgeGraph,
}

impl Indexed<'_> {
    fn join_forward(&self, r: &str, objects: &BTreeSet<EntityId>) -> BTreeSet<EntityId> {
        let r = RelationId::new(r);
        objects
            .iter()
            .flat_map(|o| self.g.subjects_of(&r, o).iter().cloned())
            .collect()
    }

    fn join_reverse(&self, r: &str, subjects: &BTreeSet<EntityId>) -> BTreeSet<EntityId> {
        let r = RelationId::new(r);
        subjects
            .iter()
            .flat_map(|s| self.g.objects_of(s, &r).iter().cloned())
            .collect()
    }

    fn pairs(&self, r: &str) -> BTreeSet<(EntityId, EntityId)> {
        // (R r) reverses the relation: pairs are (object, subject).
        self.g
            .facts()
            .filter(|t| t.relation.as_str() == r)
            .map(|t| (t.tail.clone(), t.head.clone()))
            .collect()
    }

    fn holds(&self, s: &str, p: &str, o: &str) -> bool {
        self.g
            .has_triple(&EntityId::new(s), &RelationId::new(p), &EntityId::new(o))
    }

    fn grouped(
        &self,
        core: &GroupedCore<'_>,
        keys: &BTreeSet<EntityId>,
        witnesses: &BTreeSet<EntityId>,
    ) -> BTreeMap<EntityId, u64> {
        let r = RelationId::new(core.relation);
        let mut out = BTreeMap::new();
        for k in keys {
            let linked = match core.direction {
                Direction::Forward => self.g.objects_of(k, &r),
                Direction::Reverse => self.g.subjects_of(&r, k),
            };
            let n = linked.iter().filter(|w| witnesses.contains(*w)).count() as u64;
            if n > 0 {
                out.insert(k.clone(), n);
            }
        }
        out
    }
}
