//! Exhaustive reference evaluator. It enumerates every candidate entity and
//! tests membership against the raw fact set, never touching the graph
//! indexes, and is used to cross-check [`crate::eval::eval`].

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::eval::{EvalError, EvalResult};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::sexpr::{type_check, Function, Head, SExpr};

/// Largest graph the exhaustive evaluator accepts.
pub const ORACLE_LIMIT: usize = 200;

struct Oracle {
    facts: HashSet<(String, String, String)>,
    universe: Vec<String>,
}

type Set = BTreeSet<String>;

impl Oracle {
    fn fact(&self, s: &str, p: &str, o: &str) -> bool {
        self.facts.contains(&(s.to_string(), p.to_string(), o.to_string()))
    }

    fn set(&self, e: &SExpr) -> Result<Set, EvalError> {
        match self.eval(e)? {
            Val::Set(s) => Ok(s),
            _ => Err(EvalError::Semantic(format!("`{e}` is not an entity set"))),
        }
    }

    fn counts(&self, e: &SExpr) -> Result<BTreeMap<String, u64>, EvalError> {
        match self.eval(e)? {
            Val::Counts(m) => Ok(m),
            _ => Err(EvalError::Semantic(format!("`{e}` is not grouped"))),
        }
    }

    /// (relation, reversed, inner) of the first conjunct.
    fn primary<'a>(&self, core: &'a SExpr) -> Result<(&'a str, bool, &'a SExpr), EvalError> {
        let mut core_fns = true;
        core.walk(&mut |n| {
            if let SExpr::Call { head, .. } = n {
                core_fns &= matches!(
                    head,
                    Head::Func(Function::Join | Function::R | Function::And | Function::Values | Function::IsTrue)
                );
            }
        });
        if !core_fns {
            return Err(EvalError::Semantic("grouping over a non-core".into()));
        }
        let first = if core.function() == Some(Function::And) {
            &core.args()[0]
        } else {
            core
        };
        if first.function() != Some(Function::Join) {
            return Err(EvalError::Semantic("grouping without a primary join".into()));
        }
        let (rel, inner) = (&first.args()[0], &first.args()[1]);
        match rel {
            SExpr::Relation(r) => Ok((r, false, inner)),
            SExpr::Call { args, .. } => match args.first() {
                Some(SExpr::Relation(r)) => Ok((r, true, inner)),
                _ => Err(EvalError::Semantic("malformed primary join".into())),
            },
            _ => Err(EvalError::Semantic("malformed primary join".into())),
        }
    }

    fn linked(&self, rel: &str, reversed: bool, key: &str, witness: &str) -> bool {
        if reversed {
            self.fact(witness, rel, key)
        } else {
            self.fact(key, rel, witness)
        }
    }

    fn group_count(&self, core: &SExpr) -> Result<BTreeMap<String, u64>, EvalError> {
        let (rel, reversed, inner) = self.primary(core)?;
        let answers = self.set(core)?;
        let witnesses = self.set(inner)?;
        let mut out = BTreeMap::new();
        for k in &self.universe {
            if !answers.contains(k) {
                continue;
            }
            let n = witnesses.iter().filter(|w| self.linked(rel, reversed, k, w)).count() as u64;
            if n > 0 {
                out.insert(k.clone(), n);
            }
        }
        Ok(out)
    }

    fn reference(&self, grouped: &SExpr, set: &Set) -> Result<u64, EvalError> {
        match grouped.function() {
            Some(Function::GroupCount) => {
                let (rel, reversed, inner) = self.primary(&grouped.args()[0])?;
                let witnesses = self.set(inner)?;
                Ok(witnesses
                    .iter()
                    .filter(|w| set.iter().any(|s| self.linked(rel, reversed, s, w)))
                    .count() as u64)
            }
            Some(Function::GroupSum) => {
                Ok(self.reference(&grouped.args()[0], set)? + self.reference(&grouped.args()[1], set)?)
            }
            _ => Err(EvalError::Semantic("reference over a non-grouped argument".into())),
        }
    }

    fn eval(&self, e: &SExpr) -> Result<Val, EvalError> {
        use Function::*;
        let (f, args) = match e {
            SExpr::Entity(id) => return Ok(Val::Set(BTreeSet::from([id.clone()]))),
            SExpr::Number(n) => return Ok(Val::Int(*n)),
            SExpr::Call {
                head: Head::Func(f),
                args,
            } => (*f, args.as_slice()),
            SExpr::Placeholder(p) => return Err(EvalError::Unresolved(p.clone())),
            other => return Err(EvalError::Semantic(format!("unexpected `{other}`"))),
        };
        Ok(match f {
            Join => {
                let inner = self.set(&args[1])?;
                let (rel, reversed) = match &args[0] {
                    SExpr::Relation(r) => (r.as_str(), false),
                    SExpr::Call { args: ra, .. } => match ra.first() {
                        Some(SExpr::Relation(r)) => (r.as_str(), true),
                        _ => return Err(EvalError::Semantic("malformed join".into())),
                    },
                    _ => return Err(EvalError::Semantic("malformed join".into())),
                };
                Val::Set(
                    self.universe
                        .iter()
                        .filter(|x| {
                            inner.iter().any(|y| {
                                if reversed {
                                    self.fact(y, rel, x)
                                } else {
                                    self.fact(x, rel, y)
                                }
                            })
                        })
                        .cloned()
                        .collect(),
                )
            }
            R => match &args[0] {
                SExpr::Relation(r) => {
                    let mut pairs = BTreeSet::new();
                    for a in &self.universe {
                        for b in &self.universe {
                            if self.fact(b, r, a) {
                                pairs.insert((a.clone(), b.clone()));
                            }
                        }
                    }
                    Val::Pairs(pairs)
                }
                _ => return Err(EvalError::Semantic("malformed R".into())),
            },
            And => {
                let sets = args.iter().map(|a| self.set(a)).collect::<Result<Vec<_>, _>>()?;
                Val::Set(
                    sets[0]
                        .iter()
                        .filter(|x| sets.iter().all(|s| s.contains(*x)))
                        .cloned()
                        .collect(),
                )
            }
            Or => {
                let sets = args.iter().map(|a| self.set(a)).collect::<Result<Vec<_>, _>>()?;
                Val::Set(sets.into_iter().flatten().collect())
            }
            Diff => {
                let a = self.set(&args[0])?;
                let b = self.set(&args[1])?;
                Val::Set(a.difference(&b).cloned().collect())
            }
            Values => {
                let mut ents = BTreeSet::new();
                let mut nums = BTreeSet::new();
                for a in args {
                    match a {
                        SExpr::Entity(id) => {
                            ents.insert(id.clone());
                        }
                        SExpr::Number(n) => {
                            nums.insert(*n);
                        }
                        _ => return Err(EvalError::Semantic("malformed VALUES".into())),
                    }
                }
                if nums.is_empty() {
                    Val::Set(ents)
                } else {
                    Val::Nums(nums)
                }
            }
            IsTrue => match (&args[0], &args[1], &args[2]) {
                (SExpr::Entity(s), SExpr::Relation(p), SExpr::Entity(o)) => Val::Bool(self.fact(s, p, o)),
                _ => return Err(EvalError::Semantic("malformed IS_TRUE".into())),
            },
            All => {
                let mut all = true;
                for a in args {
                    match self.eval(a)? {
                        Val::Bool(b) => all = all && b,
                        _ => return Err(EvalError::Semantic("ALL over non-boolean".into())),
                    }
                }
                Val::Bool(all)
            }
            Count => Val::Int(match self.eval(&args[0])? {
                Val::Set(s) => s.len() as u64,
                Val::Nums(s) => s.len() as u64,
                Val::Counts(m) => m.len() as u64,
                _ => return Err(EvalError::Semantic("COUNT over a scalar".into())),
            }),
            Distinct => Val::Set(self.set(&args[0])?),
            GroupCount => Val::Counts(self.group_count(&args[0])?),
            GroupSum => {
                let a = self.counts(&args[0])?;
                let b = self.counts(&args[1])?;
                let keys: Set = a.keys().chain(b.keys()).cloned().collect();
                Val::Counts(
                    keys.into_iter()
                        .map(|k| {
                            let v = a.get(&k).copied().unwrap_or(0) + b.get(&k).copied().unwrap_or(0);
                            (k, v)
                        })
                        .collect(),
                )
            }
            ArgMax | ArgMin => {
                let gc = self.counts(&args[0])?;
                Val::Set(
                    gc.iter()
                        .filter(|(_, v)| gc.values().all(|o| if f == ArgMax { *v >= o } else { *v <= o }))
                        .map(|(k, _)| k.clone())
                        .collect(),
                )
            }
            Lt | Le | Gt | Ge | Eq => {
                let gc = self.counts(&args[0])?;
                let n = match &args[1] {
                    SExpr::Number(n) => *n,
                    other => {
                        let s = self.set(other)?;
                        self.reference(&args[0], &s)?
                    }
                };
                Val::Set(
                    gc.into_iter()
                        .filter(|(_, v)| match f {
                            Lt => *v < n,
                            Le => *v <= n,
                            Gt => *v > n,
                            Ge => *v >= n,
                            _ => *v == n,
                        })
                        .map(|(k, _)| k)
                        .collect(),
                )
            }
        })
    }
}

enum Val {
    Set(Set),
    Nums(BTreeSet<u64>),
    Pairs(BTreeSet<(String, String)>),
    Counts(BTreeMap<String, u64>),
    Bool(bool),
    Int(u64),
}

/// Evaluates by exhaustive enumeration; graphs are limited to
/// [`ORACLE_LIMIT`] entities.
pub fn brute_force_eval(e: &SExpr, g: &KnowledgeGraph) -> Result<EvalResult, EvalError> {
    if g.entity_count() > ORACLE_LIMIT {
        return Err(EvalError::TooLarge {
            entities: g.entity_count(),
            limit: ORACLE_LIMIT,
        });
    }
    if let Some(p) = e.placeholders().into_iter().next() {
        return Err(EvalError::Unresolved(p));
    }
    type_check(e)?;
    let facts: HashSet<(String, String, String)> = g
        .facts()
        .map(|t| {
            (
                t.head.as_str().to_string(),
                t.relation.as_str().to_string(),
                t.tail.as_str().to_string(),
            )
        })
        .collect();
    let mut universe: Set = g.entities().map(|e| e.as_str().to_string()).collect();
    universe.extend(e.entities().into_iter().map(str::to_string));
    let oracle = Oracle {
        facts,
        universe: universe.into_iter().collect(),
    };
    let id = |s: String| EntityId::new(s);
    Ok(match oracle.eval(e)? {
        Val::Set(s) => EvalResult::EntitySet(s.into_iter().map(id).collect()),
        Val::Nums(s) => EvalResult::ValueSet(s),
        Val::Pairs(p) => EvalResult::PairSet(p.into_iter().map(|(a, b)| (id(a), id(b))).collect()),
        Val::Counts(m) => EvalResult::GroupedCounts(m.into_iter().map(|(k, v)| (id(k), v)).collect()),
        Val::Bool(b) => EvalResult::Boolean(b),
        Val::Int(n) => EvalResult::Integer(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{LabelKind, Triple};
    use crate::sexpr::parse;

    #[test]
    fn unknown_ids_agree() {
        let g = KnowledgeGraph::from_parts(
            [Triple::new("a", "p", "b")],
            std::iter::empty::<(&str, LabelKind, &str)>(),
        )
        .unwrap();
        let e = parse("(JOIN p nowhere)").unwrap();
        assert_eq!(
            brute_force_eval(&e, &g).unwrap(),
            EvalResult::EntitySet(BTreeSet::new())
        );
        assert_eq!(crate::eval::eval(&e, &g).unwrap(), brute_force_eval(&e, &g).unwrap());
    }

    #[test]
    fn size_guard() {
        let triples: Vec<Triple> = (0..=ORACLE_LIMIT)
            .map(|i| Triple::new(&format!("e{i}"), "p", "hub"))
            .collect();
        let g = KnowledgeGraph::from_parts(triples, std::iter::empty::<(&str, LabelKind, &str)>()).unwrap();
        let e = parse("(JOIN p hub)").unwrap();
        assert!(matches!(brute_force_eval(&e, &g), Err(EvalError::TooLarge { .. })));
    }
}
