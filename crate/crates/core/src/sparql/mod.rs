//! The SPARQL subset the S-expression language compiles to, with a canonical
//! renderer, a parser for that rendering, an embedded executor, and core
//! extraction from WHERE patterns.
//!
//! Rendering is the golden format: single spaces, IRIs as `<id>`, integers
//! bare, triples terminated by ` .`, clauses ordered WHERE, GROUP BY, HAVING.

mod compile;
mod exec;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use compile::{from_where, to_sparql, ConversionError, FromWhereError};
pub use exec::{execute_sparql, ExecError};
pub use parse::{parse_sparql_subset, SparqlParseError};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Iri(String),
    Int(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriplePattern {
    pub s: Term,
    pub p: String,
    pub o: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Triple(TriplePattern),
    Values { var: String, values: Vec<Term> },
    Union(Vec<Group>),
    Minus(Group),
    SubSelect(Box<Select>),
}

/// A `{ ... }` block; also the WHERE pattern of a query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Group {
    pub elements: Vec<Element>,
}

pub type WherePattern = Group;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Aggregate {
    CountDistinct(String),
    Sum(String),
    Max(String),
    Min(String),
}

impl Aggregate {
    pub fn var(&self) -> &str {
        match self {
            Aggregate::CountDistinct(v) | Aggregate::Sum(v) | Aggregate::Max(v) | Aggregate::Min(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }

    pub fn holds(self, a: u64, b: u64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Var(String),
    Int(u64),
    Agg(Aggregate),
    Add(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(v) => out.push(v.clone()),
            Expr::Int(_) => {}
            Expr::Agg(a) => out.push(a.var().to_string()),
            Expr::Add(a, b) | Expr::Cmp(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Projection {
    Var(String),
    Agg(Aggregate, String),
}

impl Projection {
    pub fn name(&self) -> &str {
        match self {
            Projection::Var(v) | Projection::Agg(_, v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Select {
    pub distinct: bool,
    pub projection: Vec<Projection>,
    pub pattern: Group,
    pub group_by: Vec<String>,
    pub having: Option<Expr>,
}

impl Select {
    pub fn is_aggregated(&self) -> bool {
        !self.group_by.is_empty()
            || self.having.is_some()
            || self.projection.iter().any(|p| matches!(p, Projection::Agg(..)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Query {
    Ask(Group),
    Select(Select),
}

/// Top-level shape of a query, which fixes the result type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryForm {
    Ask,
    SelectDistinct,
    SelectCount,
    SelectGrouped,
}

impl Query {
    pub fn pattern(&self) -> &Group {
        match self {
            Query::Ask(g) => g,
            Query::Select(s) => &s.pattern,
        }
    }

    pub fn form(&self) -> Option<QueryForm> {
        match self {
            Query::Ask(_) => Some(QueryForm::Ask),
            Query::Select(s) => match (s.projection.as_slice(), s.group_by.is_empty()) {
                ([Projection::Agg(Aggregate::CountDistinct(_), _)], true) if s.having.is_none() => {
                    Some(QueryForm::SelectCount)
                }
                ([Projection::Var(k), Projection::Agg(..)], false) if s.group_by == [k.clone()] => {
                    Some(QueryForm::SelectGrouped)
                }
                ([Projection::Var(_)], true) if s.distinct && s.having.is_none() => Some(QueryForm::SelectDistinct),
                _ => None,
            },
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Iri(i) => write!(f, "<{i}>"),
            Term::Int(n) => write!(f, "{n}"),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::CountDistinct(v) => write!(f, "COUNT(DISTINCT ?{v})"),
            Aggregate::Sum(v) => write!(f, "SUM(?{v})"),
            Aggregate::Max(v) => write!(f, "MAX(?{v})"),
            Aggregate::Min(v) => write!(f, "MIN(?{v})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => write!(f, "?{v}"),
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Agg(a) => write!(f, "{a}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Triple(t) => write!(f, "{} <{}> {} .", t.s, t.p, t.o),
            Element::Values { var, values } => {
                write!(f, "VALUES ?{var} {{")?;
                for v in values {
                    write!(f, " {v}")?;
                }
                f.write_str(" }")
            }
            Element::Union(branches) => {
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" UNION ")?;
                    }
                    write!(f, "{b}")?;
                }
                Ok(())
            }
            Element::Minus(g) => write!(f, "MINUS {g}"),
            Element::SubSelect(s) => write!(f, "{{ {s} }}"),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for e in &self.elements {
            write!(f, " {e}")?;
        }
        f.write_str(" }")
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT")?;
        if self.distinct {
            f.write_str(" DISTINCT")?;
        }
        for p in &self.projection {
            match p {
                Projection::Var(v) => write!(f, " ?{v}")?,
                Projection::Agg(a, v) => write!(f, " ({a} AS ?{v})")?,
            }
        }
        write!(f, " WHERE {}", self.pattern)?;
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY")?;
            for v in &self.group_by {
                write!(f, " ?{v}")?;
            }
        }
        if let Some(h) = &self.having {
            write!(f, " HAVING ({h})")?;
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Ask(g) => write!(f, "ASK {g}"),
            Query::Select(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for Query {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_sparql_subset(&s).map_err(serde::de::Error::custom)
    }
}
