use thiserror::Error;

use super::{Aggregate, CmpOp, Element, Expr, Group, Projection, Query, Select, Term, TriplePattern};
use crate::eval::{decompose_grouped, Direction, EvalError};
use crate::sexpr::{match_core_pattern, type_check, Function, Head, SExpr, TypeError, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversionError {
    #[error("unresolved reference `{0}` cannot be converted")]
    Unresolved(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("no query form for `{0}`")]
    Unsupported(String),
    #[error("{0}")]
    Grouping(String),
}

impl From<EvalError> for ConversionError {
    fn from(e: EvalError) -> Self {
        ConversionError::Grouping(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FromWhereError {
    #[error("shape unsupported at `{element}`: {reason}")]
    Unsupported { element: String, reason: String },
    #[error("extracted `{0}` matches none of the core patterns")]
    NoPattern(SExpr),
}

fn cmp_op(f: Function) -> Option<CmpOp> {
    Some(match f {
        Function::Lt => CmpOp::Lt,
        Function::Le => CmpOp::Le,
        Function::Gt => CmpOp::Gt,
        Function::Ge => CmpOp::Ge,
        Function::Eq => CmpOp::Eq,
        _ => return None,
    })
}

fn var(v: &str) -> Term {
    Term::Var(v.to_string())
}

fn triple(s: Term, p: &str, o: Term) -> Element {
    Element::Triple(TriplePattern { s, p: p.to_string(), o })
}

#[derive(Default)]
struct Compiler {
    w: usize,
    c: usize,
    m: usize,
    r: usize,
}

impl Compiler {
    fn fresh(counter: &mut usize, prefix: &str) -> String {
        *counter += 1;
        format!("{prefix}{counter}")
    }

    fn w(&mut self) -> String {
        Self::fresh(&mut self.w, "w")
    }

    fn c(&mut self) -> String {
        Self::fresh(&mut self.c, "c")
    }

    /// Appends elements binding `v` to the members of entity set `e`.
    fn entity_set(&mut self, e: &SExpr, v: &str, out: &mut Vec<Element>) -> Result<(), ConversionError> {
        use Function::*;
        let (f, args) = match e {
            SExpr::Entity(id) => {
                out.push(Element::Values {
                    var: v.to_string(),
                    values: vec![Term::Iri(id.clone())],
                });
                return Ok(());
            }
            SExpr::Call {
                head: Head::Func(f),
                args,
            } => (*f, args),
            other => return Err(unsupported(other)),
        };
        match f {
            Values => {
                let mut values = Vec::new();
                for a in args {
                    match a {
                        SExpr::Entity(id) => values.push(Term::Iri(id.clone())),
                        SExpr::Number(n) => values.push(Term::Int(*n)),
                        other => return Err(unsupported(other)),
                    }
                }
                out.push(Element::Values {
                    var: v.to_string(),
                    values,
                });
            }
            Join => {
                let (rel, reversed) = match &args[0] {
                    SExpr::Relation(r) => (r.as_str(), false),
                    rev => match rev.args().first() {
                        Some(SExpr::Relation(r)) => (r.as_str(), true),
                        _ => return Err(unsupported(rev)),
                    },
                };
                let inner = match &args[1] {
                    SExpr::Entity(id) => Term::Iri(id.clone()),
                    other => {
                        let w = self.w();
                        self.entity_set(other, &w, out)?;
                        var(&w)
                    }
                };
                out.push(if reversed {
                    triple(inner, rel, var(v))
                } else {
                    triple(var(v), rel, inner)
                });
            }
            And | Distinct => {
                for a in args {
                    self.entity_set(a, v, out)?;
                }
            }
            Or => {
                let mut branches = Vec::new();
                for a in args {
                    let mut b = Vec::new();
                    self.entity_set(a, v, &mut b)?;
                    branches.push(Group { elements: b });
                }
                out.push(Element::Union(branches));
            }
            Diff => {
                self.entity_set(&args[0], v, out)?;
                let mut b = Vec::new();
                self.entity_set(&args[1], v, &mut b)?;
                out.push(Element::Minus(Group { elements: b }));
            }
            ArgMax | ArgMin => {
                let sel = self.extremum(&args[0], f == ArgMax, v)?;
                out.push(Element::SubSelect(Box::new(sel)));
            }
            Lt | Le | Gt | Ge | Eq => {
                let sel = self.comparison(f, &args[0], &args[1], v)?;
                out.push(Element::SubSelect(Box::new(sel)));
            }
            _ => return Err(unsupported(e)),
        }
        Ok(())
    }

    /// Pattern grouped by `key` plus the aggregate yielding each key's count.
    fn grouped(&mut self, e: &SExpr, key: &str) -> Result<(Vec<Element>, Aggregate), ConversionError> {
        match e.function() {
            Some(Function::GroupCount) => {
                let gc = decompose_grouped(&e.args()[0])?;
                let w = self.w();
                let mut out = Vec::new();
                self.entity_set(gc.inner, &w, &mut out)?;
                out.push(match gc.direction {
                    Direction::Forward => triple(var(key), gc.relation, var(&w)),
                    Direction::Reverse => triple(var(&w), gc.relation, var(key)),
                });
                for c in gc.constraints {
                    self.entity_set(c, key, &mut out)?;
                }
                Ok((out, Aggregate::CountDistinct(w)))
            }
            Some(Function::GroupSum) => {
                let cv = self.c();
                let mut branches = Vec::new();
                for a in e.args() {
                    let (pattern, agg) = self.grouped(a, key)?;
                    branches.push(Group {
                        elements: vec![Element::SubSelect(Box::new(Select {
                            distinct: false,
                            projection: vec![Projection::Var(key.to_string()), Projection::Agg(agg, cv.clone())],
                            pattern: Group { elements: pattern },
                            group_by: vec![key.to_string()],
                            having: None,
                        }))],
                    });
                }
                Ok((vec![Element::Union(branches)], Aggregate::Sum(cv)))
            }
            _ => Err(unsupported(e)),
        }
    }

    /// Sub-selects computing the reference count of `set` under a grouped
    /// expression, and the expression summing them.
    fn reference(&mut self, e: &SExpr, set: &SExpr) -> Result<(Vec<Element>, Expr), ConversionError> {
        match e.function() {
            Some(Function::GroupCount) => {
                let gc = decompose_grouped(&e.args()[0])?;
                let s = self.w();
                let w = self.w();
                let r = Self::fresh(&mut self.r, "r");
                let mut pattern = Vec::new();
                self.entity_set(set, &s, &mut pattern)?;
                self.entity_set(gc.inner, &w, &mut pattern)?;
                pattern.push(match gc.direction {
                    Direction::Forward => triple(var(&s), gc.relation, var(&w)),
                    Direction::Reverse => triple(var(&w), gc.relation, var(&s)),
                });
                let sel = Select {
                    distinct: false,
                    projection: vec![Projection::Agg(Aggregate::CountDistinct(w), r.clone())],
                    pattern: Group { elements: pattern },
                    group_by: Vec::new(),
                    having: None,
                };
                Ok((vec![Element::SubSelect(Box::new(sel))], Expr::Var(r)))
            }
            Some(Function::GroupSum) => {
                let (mut a, ea) = self.reference(&e.args()[0], set)?;
                let (b, eb) = self.reference(&e.args()[1], set)?;
                a.extend(b);
                Ok((a, Expr::Add(Box::new(ea), Box::new(eb))))
            }
            _ => Err(unsupported(e)),
        }
    }

    fn comparison(&mut self, f: Function, gc: &SExpr, rhs: &SExpr, key: &str) -> Result<Select, ConversionError> {
        let op = cmp_op(f).ok_or_else(|| unsupported(gc))?;
        let (mut pattern, agg) = self.grouped(gc, key)?;
        let mut group_by = vec![key.to_string()];
        let threshold = match rhs {
            SExpr::Number(n) => Expr::Int(*n),
            set => {
                let (refs, expr) = self.reference(gc, set)?;
                pattern.extend(refs);
                let mut vs = Vec::new();
                expr.vars(&mut vs);
                group_by.extend(vs);
                expr
            }
        };
        Ok(Select {
            distinct: false,
            projection: vec![Projection::Var(key.to_string())],
            pattern: Group { elements: pattern },
            group_by,
            having: Some(Expr::Cmp(op, Box::new(Expr::Agg(agg)), Box::new(threshold))),
        })
    }

    fn extremum(&mut self, gc: &SExpr, max: bool, key: &str) -> Result<Select, ConversionError> {
        let (mut pattern, agg) = self.grouped(gc, key)?;
        let m = Self::fresh(&mut self.m, "m");
        let inner_key = self.w();
        let cv = self.c();
        let (inner_pattern, inner_agg) = self.grouped(gc, &inner_key)?;
        let per_key = Select {
            distinct: false,
            projection: vec![
                Projection::Var(inner_key.clone()),
                Projection::Agg(inner_agg, cv.clone()),
            ],
            pattern: Group {
                elements: inner_pattern,
            },
            group_by: vec![inner_key],
            having: None,
        };
        let best = Select {
            distinct: false,
            projection: vec![Projection::Agg(
                if max { Aggregate::Max(cv) } else { Aggregate::Min(cv) },
                m.clone(),
            )],
            pattern: Group {
                elements: vec![Element::SubSelect(Box::new(per_key))],
            },
            group_by: Vec::new(),
            having: None,
        };
        pattern.push(Element::SubSelect(Box::new(best)));
        Ok(Select {
            distinct: false,
            projection: vec![Projection::Var(key.to_string())],
            pattern: Group { elements: pattern },
            group_by: vec![key.to_string(), m.clone()],
            having: Some(Expr::Cmp(CmpOp::Eq, Box::new(Expr::Agg(agg)), Box::new(Expr::Var(m)))),
        })
    }
}

fn unsupported(e: &SExpr) -> ConversionError {
    match e {
        SExpr::Placeholder(p) => ConversionError::Unresolved(p.clone()),
        SExpr::Call {
            head: Head::Slot(s), ..
        } => ConversionError::Unresolved(s.clone()),
        other => ConversionError::Unsupported(other.to_string()),
    }
}

fn ask_triples(e: &SExpr, out: &mut Vec<Element>) -> Result<(), ConversionError> {
    match (e.function(), e.args()) {
        (Some(Function::IsTrue), [SExpr::Entity(s), SExpr::Relation(p), SExpr::Entity(o)]) => {
            out.push(triple(Term::Iri(s.clone()), p, Term::Iri(o.clone())));
            Ok(())
        }
        (Some(Function::All), args) => args.iter().try_for_each(|a| ask_triples(a, out)),
        _ => Err(unsupported(e)),
    }
}

/// Compiles a resolved, well-typed expression into the SPARQL subset.
pub fn to_sparql(e: &SExpr) -> Result<Query, ConversionError> {
    if let Some(p) = e.placeholders().into_iter().next() {
        return Err(ConversionError::Unresolved(p));
    }
    let ty = type_check(e)?;
    let mut c = Compiler::default();
    let x = "x";
    let mut pattern = Vec::new();
    Ok(match ty {
        ValueType::Boolean => {
            ask_triples(e, &mut pattern)?;
            Query::Ask(Group { elements: pattern })
        }
        ValueType::Integer => {
            let arg = match e.function() {
                Some(Function::Count) => &e.args()[0],
                _ => return Err(ConversionError::Unsupported(e.to_string())),
            };
            match type_check(arg)? {
                ValueType::GroupedCounts => pattern = c.grouped(arg, x)?.0,
                _ => c.entity_set(arg, x, &mut pattern)?,
            }
            Query::Select(Select {
                distinct: false,
                projection: vec![Projection::Agg(Aggregate::CountDistinct(x.into()), "c".into())],
                pattern: Group { elements: pattern },
                group_by: Vec::new(),
                having: None,
            })
        }
        ValueType::EntitySet | ValueType::ValueSet => {
            c.entity_set(e, x, &mut pattern)?;
            Query::Select(Select {
                distinct: true,
                projection: vec![Projection::Var(x.into())],
                pattern: Group { elements: pattern },
                group_by: Vec::new(),
                having: None,
            })
        }
        ValueType::GroupedCounts => {
            let (pattern, agg) = c.grouped(e, x)?;
            Query::Select(Select {
                distinct: false,
                projection: vec![Projection::Var(x.into()), Projection::Agg(agg, "c".into())],
                pattern: Group { elements: pattern },
                group_by: vec![x.into()],
                having: None,
            })
        }
        ValueType::PairSet => return Err(ConversionError::Unsupported(e.to_string())),
    })
}

/// Rebuilds the core a WHERE pattern encodes. The answer variable is `?x`;
/// a pattern without variables must be a single constant triple.
pub fn from_where(w: &Group) -> Result<SExpr, FromWhereError> {
    for el in &w.elements {
        if !matches!(el, Element::Triple(_) | Element::Values { .. }) {
            return Err(FromWhereError::Unsupported {
                element: el.to_string(),
                reason: "only triples and VALUES blocks form cores".into(),
            });
        }
    }
    let has_vars = w.elements.iter().any(|el| match el {
        Element::Triple(t) => matches!(t.s, Term::Var(_)) || matches!(t.o, Term::Var(_)),
        _ => true,
    });
    let core = if !has_vars {
        match w.elements.as_slice() {
            [Element::Triple(TriplePattern {
                s: Term::Iri(s),
                p,
                o: Term::Iri(o),
            })] => SExpr::call(
                Function::IsTrue,
                vec![
                    SExpr::entity(s.as_str()),
                    SExpr::relation(p.as_str()),
                    SExpr::entity(o.as_str()),
                ],
            ),
            _ => {
                return Err(FromWhereError::Unsupported {
                    element: w.to_string(),
                    reason: "a constant pattern must be one triple".into(),
                })
            }
        }
    } else {
        let mut used = vec![false; w.elements.len()];
        let core = build(w, "x", None, &mut used)?;
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(FromWhereError::Unsupported {
                element: w.elements[i].to_string(),
                reason: "not connected to ?x".into(),
            });
        }
        core
    };
    match match_core_pattern(&core) {
        Some(_) => Ok(core),
        None => Err(FromWhereError::NoPattern(core)),
    }
}

fn leaf_of(t: &Term, el: &Element) -> Result<SExpr, FromWhereError> {
    match t {
        Term::Iri(i) => Ok(SExpr::entity(i.as_str())),
        _ => Err(FromWhereError::Unsupported {
            element: el.to_string(),
            reason: "integer terms cannot appear in triples".into(),
        }),
    }
}

fn build(w: &Group, v: &str, parent: Option<usize>, used: &mut [bool]) -> Result<SExpr, FromWhereError> {
    let mut conjuncts = Vec::new();
    for (i, el) in w.elements.iter().enumerate() {
        if Some(i) == parent {
            continue;
        }
        let is_v = |t: &Term| matches!(t, Term::Var(n) if n == v);
        match el {
            Element::Values { var: n, values } if n == v => {
                if used[i] {
                    return Err(cycle(el));
                }
                used[i] = true;
                let mut args = Vec::new();
                for t in values {
                    args.push(leaf_of(t, el)?);
                }
                conjuncts.push(SExpr::call(Function::Values, args));
            }
            Element::Triple(t) if is_v(&t.s) || is_v(&t.o) => {
                if used[i] {
                    return Err(cycle(el));
                }
                used[i] = true;
                let forward = is_v(&t.s);
                let other = if forward { &t.o } else { &t.s };
                let inner = match other {
                    Term::Var(n) if n == v => return Err(cycle(el)),
                    Term::Var(n) => build(w, n, Some(i), used)?,
                    t2 => leaf_of(t2, el)?,
                };
                let rel = if forward {
                    SExpr::relation(t.p.as_str())
                } else {
                    SExpr::rev(t.p.as_str())
                };
                conjuncts.push(SExpr::join(rel, inner));
            }
            _ => {}
        }
    }
    match conjuncts.len() {
        0 => Err(FromWhereError::Unsupported {
            element: format!("?{v}"),
            reason: "variable has no constraints".into(),
        }),
        1 => Ok(conjuncts.pop().unwrap()),
        _ => Ok(SExpr::and(conjuncts)),
    }
}

fn cycle(el: &Element) -> FromWhereError {
    FromWhereError::Unsupported {
        element: el.to_string(),
        reason: "cyclic pattern".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::{parse, CORE_PATTERNS};

    fn sparql(s: &str) -> String {
        to_sparql(&parse(s).unwrap()).unwrap().render()
    }

    #[test]
    fn ask_form() {
        assert_eq!(sparql("(IS_TRUE a p b)"), "ASK { <a> <p> <b> . }");
    }

    #[test]
    fn father_core_select() {
        assert_eq!(
            sparql("(AND (JOIN (R father) Ludovico_II,_Marquess_of_Saluzzo) (JOIN instance_of common_name))"),
            "SELECT DISTINCT ?x WHERE { <Ludovico_II,_Marquess_of_Saluzzo> <father> ?x . ?x <instance_of> <common_name> . }"
        );
    }

    #[test]
    fn count_and_having() {
        assert_eq!(
            sparql("(COUNT (GE (GROUP_COUNT (JOIN (R loc) (JOIN instance_of app))) 840))"),
            "SELECT (COUNT(DISTINCT ?x) AS ?c) WHERE { { SELECT ?x WHERE { ?w1 <instance_of> <app> . ?w1 <loc> ?x . } \
             GROUP BY ?x HAVING (COUNT(DISTINCT ?w1) >= 840) } }"
        );
    }

    #[test]
    fn eq_always_has_having() {
        let q = sparql("(EQ (GROUP_COUNT (JOIN r e)) 3)");
        assert!(q.contains("HAVING (COUNT(DISTINCT ?w1) = 3)"), "{q}");
    }

    #[test]
    fn where_extraction_examples() {
        let q = crate::sparql::parse_sparql_subset(
            "SELECT DISTINCT ?x WHERE { ?x <father> <L> . ?x <instance_of> <common_name> . }",
        )
        .unwrap();
        let core = from_where(q.pattern()).unwrap();
        assert_eq!(core.to_string(), "(AND (JOIN father L) (JOIN instance_of common_name))");
        let q = crate::sparql::parse_sparql_subset("SELECT DISTINCT ?x WHERE { ?x <p> <o> . }").unwrap();
        assert_eq!(from_where(q.pattern()).unwrap().to_string(), "(JOIN p o)");
    }

    #[test]
    fn skeletons_round_trip() {
        for p in CORE_PATTERNS {
            let core = parse(p.skeleton).unwrap();
            let q = to_sparql(&core).unwrap();
            assert_eq!(from_where(q.pattern()).unwrap(), core, "{}", p.skeleton);
        }
    }

    #[test]
    fn unsupported_shapes_are_named() {
        let q = to_sparql(&parse("(OR (JOIN p a) (JOIN p b))").unwrap()).unwrap();
        let err = from_where(q.pattern()).unwrap_err();
        assert!(matches!(err, FromWhereError::Unsupported { .. }));
        assert!(err.to_string().contains("UNION"));
    }

    #[test]
    fn placeholders_rejected() {
        let t = crate::sexpr::parse_template("(COUNT x1)").unwrap();
        assert_eq!(to_sparql(&t), Err(ConversionError::Unresolved("x1".into())));
    }
}
