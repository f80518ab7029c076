use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{Aggregate, Element, Expr, Group, Projection, Query, QueryForm, Select, Term, TriplePattern};
use crate::eval::EvalResult;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("variable ?{0} is used but never bound")]
    Unbound(String),
    #[error("query shape has no result form: {0}")]
    NoForm(String),
    #[error("type error during execution: {0}")]
    Type(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Value {
    Iri(String),
    Int(u64),
}

type Row = BTreeMap<String, Value>;

fn bound_vars(g: &Group, out: &mut BTreeSet<String>) {
    for el in &g.elements {
        match el {
            Element::Triple(t) => {
                for term in [&t.s, &t.o] {
                    if let Term::Var(v) = term {
                        out.insert(v.clone());
                    }
                }
            }
            Element::Values { var, .. } => {
                out.insert(var.clone());
            }
            Element::Union(bs) => bs.iter().for_each(|b| bound_vars(b, out)),
            Element::Minus(_) => {}
            Element::SubSelect(s) => {
                out.extend(s.projection.iter().map(|p| p.name().to_string()));
            }
        }
    }
}

fn check_group(g: &Group) -> Result<(), ExecError> {
    for el in &g.elements {
        match el {
            Element::Union(bs) => bs.iter().try_for_each(check_group)?,
            Element::Minus(m) => check_group(m)?,
            Element::SubSelect(s) => check_select(s)?,
            _ => {}
        }
    }
    Ok(())
}

fn check_select(s: &Select) -> Result<(), ExecError> {
    check_group(&s.pattern)?;
    let mut bound = BTreeSet::new();
    bound_vars(&s.pattern, &mut bound);
    let mut used: Vec<String> = s.group_by.clone();
    for p in &s.projection {
        match p {
            Projection::Var(v) => used.push(v.clone()),
            Projection::Agg(a, _) => used.push(a.var().to_string()),
        }
    }
    if let Some(h) = &s.having {
        h.vars(&mut used);
    }
    match used.into_iter().find(|v| !bound.contains(v)) {
        Some(v) => Err(ExecError::Unbound(v)),
        None => Ok(()),
    }
}

struct Engine<'g> {
    g: &'g KnowledgeGraph,
}

fn compatible(a: &Row, b: &Row) -> bool {
    a.iter().all(|(k, v)| b.get(k).is_none_or(|w| w == v))
}

fn join(left: Vec<Row>, right: &[Row]) -> Vec<Row> {
    let mut out = Vec::new();
    for l in &left {
        for r in right {
            if compatible(l, r) {
                let mut m = l.clone();
                m.extend(r.iter().map(|(k, v)| (k.clone(), v.clone())));
                out.push(m);
            }
        }
    }
    out
}

impl Engine<'_> {
    fn resolve(row: &Row, t: &Term) -> Option<Value> {
        match t {
            Term::Var(v) => row.get(v).cloned(),
            Term::Iri(i) => Some(Value::Iri(i.clone())),
            Term::Int(n) => Some(Value::Int(*n)),
        }
    }

    fn bind(row: &Row, t: &Term, v: &EntityId) -> Option<Row> {
        match t {
            Term::Var(name) => match row.get(name) {
                Some(Value::Iri(existing)) if existing == v.as_str() => Some(row.clone()),
                Some(_) => None,
                None => {
                    let mut r = row.clone();
                    r.insert(name.clone(), Value::Iri(v.as_str().to_string()));
                    Some(r)
                }
            },
            _ => Some(row.clone()),
        }
    }

    fn triple(&self, row: &Row, t: &TriplePattern, out: &mut Vec<Row>) {
        let p = RelationId::new(t.p.as_str());
        let s = Self::resolve(row, &t.s);
        let o = Self::resolve(row, &t.o);
        match (s, o) {
            (Some(Value::Iri(s)), Some(Value::Iri(o))) => {
                if self.g.has_triple(&EntityId::new(s), &p, &EntityId::new(o)) {
                    out.push(row.clone());
                }
            }
            (Some(Value::Iri(s)), None) => {
                for o in self.g.objects_of(&EntityId::new(s), &p) {
                    out.extend(Self::bind(row, &t.o, o));
                }
            }
            (None, Some(Value::Iri(o))) => {
                for s in self.g.subjects_of(&p, &EntityId::new(o)) {
                    out.extend(Self::bind(row, &t.s, s));
                }
            }
            (None, None) => {
                for f in self.g.facts().filter(|f| f.relation == p) {
                    if let Some(r) = Self::bind(row, &t.s, &f.head) {
                        out.extend(Self::bind(&r, &t.o, &f.tail));
                    }
                }
            }
            // integer terms never occur in facts
            _ => {}
        }
    }

    fn group(&self, g: &Group) -> Result<Vec<Row>, ExecError> {
        let mut rows = vec![Row::new()];
        for el in &g.elements {
            rows = match el {
                Element::Triple(t) => {
                    let mut out = Vec::new();
                    for r in &rows {
                        self.triple(r, t, &mut out);
                    }
                    out
                }
                Element::Values { var, values } => {
                    let right: Vec<Row> = values
                        .iter()
                        .map(|t| {
                            let v = match t {
                                Term::Iri(i) => Value::Iri(i.clone()),
                                Term::Int(n) => Value::Int(*n),
                                Term::Var(v) => return Err(ExecError::Type(format!("?{v} inside VALUES"))),
                            };
                            Ok(Row::from([(var.clone(), v)]))
                        })
                        .collect::<Result<_, _>>()?;
                    join(rows, &right)
                }
                Element::Union(branches) => {
                    let mut right = Vec::new();
                    for b in branches {
                        right.extend(self.group(b)?);
                    }
                    join(rows, &right)
                }
                Element::Minus(m) => {
                    let right = self.group(m)?;
                    rows.into_iter()
                        .filter(|l| {
                            !right
                                .iter()
                                .any(|r| compatible(l, r) && l.keys().any(|k| r.contains_key(k)))
                        })
                        .collect()
                }
                Element::SubSelect(s) => {
                    let right = self.select(s)?;
                    join(rows, &right)
                }
            };
        }
        Ok(rows)
    }

    fn aggregate(a: &Aggregate, rows: &[&Row]) -> Result<Option<Value>, ExecError> {
        let values = rows.iter().filter_map(|r| r.get(a.var()));
        let ints = || -> Result<Vec<u64>, ExecError> {
            rows.iter()
                .filter_map(|r| r.get(a.var()))
                .map(|v| match v {
                    Value::Int(n) => Ok(*n),
                    Value::Iri(i) => Err(ExecError::Type(format!("cannot aggregate <{i}> numerically"))),
                })
                .collect()
        };
        Ok(match a {
            Aggregate::CountDistinct(_) => Some(Value::Int(values.collect::<BTreeSet<_>>().len() as u64)),
            Aggregate::Sum(_) => Some(Value::Int(ints()?.into_iter().sum())),
            Aggregate::Max(_) => ints()?.into_iter().max().map(Value::Int),
            Aggregate::Min(_) => ints()?.into_iter().min().map(Value::Int),
        })
    }

    fn expr(e: &Expr, key: &Row, rows: &[&Row]) -> Result<Option<Value>, ExecError> {
        Ok(match e {
            Expr::Var(v) => key.get(v).cloned(),
            Expr::Int(n) => Some(Value::Int(*n)),
            Expr::Agg(a) => Self::aggregate(a, rows)?,
            Expr::Add(a, b) => match (Self::expr(a, key, rows)?, Self::expr(b, key, rows)?) {
                (Some(Value::Int(x)), Some(Value::Int(y))) => Some(Value::Int(x + y)),
                _ => None,
            },
            Expr::Cmp(op, a, b) => match (Self::expr(a, key, rows)?, Self::expr(b, key, rows)?) {
                (Some(Value::Int(x)), Some(Value::Int(y))) => Some(Value::Int(op.holds(x, y) as u64)),
                _ => Some(Value::Int(0)),
            },
        })
    }

    fn select(&self, s: &Select) -> Result<Vec<Row>, ExecError> {
        let rows = self.group(&s.pattern)?;
        let mut out = Vec::new();
        if s.is_aggregated() {
            let mut groups: BTreeMap<Vec<Option<Value>>, Vec<&Row>> = BTreeMap::new();
            if s.group_by.is_empty() {
                groups.insert(Vec::new(), rows.iter().collect());
            } else {
                for r in &rows {
                    let k = s.group_by.iter().map(|v| r.get(v).cloned()).collect();
                    groups.entry(k).or_default().push(r);
                }
            }
            for (k, members) in groups {
                let key: Row = s
                    .group_by
                    .iter()
                    .zip(k)
                    .filter_map(|(name, v)| v.map(|v| (name.clone(), v)))
                    .collect();
                if let Some(h) = &s.having {
                    if Self::expr(h, &key, &members)? != Some(Value::Int(1)) {
                        continue;
                    }
                }
                let mut row = Row::new();
                for p in &s.projection {
                    let v = match p {
                        Projection::Var(v) => key.get(v).cloned(),
                        Projection::Agg(a, _) => Self::aggregate(a, &members)?,
                    };
                    if let Some(v) = v {
                        row.insert(p.name().to_string(), v);
                    }
                }
                out.push(row);
            }
        } else {
            for r in rows {
                let row: Row = s
                    .projection
                    .iter()
                    .filter_map(|p| r.get(p.name()).map(|v| (p.name().to_string(), v.clone())))
                    .collect();
                out.push(row);
            }
        }
        if s.distinct {
            let mut seen = BTreeSet::new();
            out.retain(|r| seen.insert(r.clone()));
        }
        Ok(out)
    }
}

/// Runs a query of the subset over `g` and tags the result by query form.
pub fn execute_sparql(q: &Query, g: &KnowledgeGraph) -> Result<EvalResult, ExecError> {
    let engine = Engine { g };
    let form = q.form().ok_or_else(|| ExecError::NoForm(q.render()))?;
    match q {
        Query::Ask(pattern) => {
            check_group(pattern)?;
            Ok(EvalResult::Boolean(!engine.group(pattern)?.is_empty()))
        }
        Query::Select(s) => {
            check_select(s)?;
            let rows = engine.select(s)?;
            let iri = |v: &Value| match v {
                Value::Iri(i) => Ok(EntityId::new(i.as_str())),
                Value::Int(n) => Err(ExecError::Type(format!("expected an entity, found {n}"))),
            };
            match form {
                QueryForm::SelectCount => {
                    let name = s.projection[0].name();
                    match rows.first().and_then(|r| r.get(name)) {
                        Some(Value::Int(n)) => Ok(EvalResult::Integer(*n)),
                        _ => Err(ExecError::Type("count query returned no integer".into())),
                    }
                }
                QueryForm::SelectGrouped => {
                    let (k, c) = (s.projection[0].name(), s.projection[1].name());
                    let mut m = BTreeMap::new();
                    for r in &rows {
                        match (r.get(k), r.get(c)) {
                            (Some(key), Some(Value::Int(n))) => {
                                m.insert(iri(key)?, *n);
                            }
                            _ => return Err(ExecError::Type("grouped row without a count".into())),
                        }
                    }
                    Ok(EvalResult::GroupedCounts(m))
                }
                _ => {
                    let name = s.projection[0].name();
                    let values: Vec<&Value> = rows.iter().filter_map(|r| r.get(name)).collect();
                    if !values.is_empty() && values.iter().all(|v| matches!(v, Value::Int(_))) {
                        Ok(EvalResult::ValueSet(
                            values
                                .into_iter()
                                .filter_map(|v| match v {
                                    Value::Int(n) => Some(*n),
                                    _ => None,
                                })
                                .collect(),
                        ))
                    } else {
                        Ok(EvalResult::EntitySet(
                            values.into_iter().map(iri).collect::<Result<_, _>>()?,
                        ))
                    }
                }
            }
        }
    }
}
