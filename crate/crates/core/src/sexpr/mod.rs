//! The extended S-expression language: abstract syntax, canonical printing,
//! parsing, static typing and the recognizer for the common core shapes.

mod parse;
mod pattern;
mod typeck;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use parse::{parse, parse_lenient, parse_template, ParseError, MAX_DEPTH};
pub use pattern::{is_core, match_core_pattern, CorePattern, CORE_PATTERNS};
pub use typeck::{type_check, TypeError, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Function {
    Join,
    R,
    And,
    Or,
    Values,
    IsTrue,
    Count,
    Distinct,
    GroupCount,
    GroupSum,
    All,
    ArgMax,
    ArgMin,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Diff,
}

/// Argument count accepted by a function: exact, or a lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }

    pub fn max(self) -> Option<usize> {
        match self {
            Arity::Exactly(k) => Some(k),
            Arity::AtLeast(_) => None,
        }
    }

    pub fn min(self) -> usize {
        match self {
            Arity::Exactly(k) | Arity::AtLeast(k) => k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "exactly {k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

impl Function {
    pub const ALL: [Function; 19] = [
        Function::Join,
        Function::R,
        Function::And,
        Function::Or,
        Function::Values,
        Function::IsTrue,
        Function::Count,
        Function::Distinct,
        Function::GroupCount,
        Function::GroupSum,
        Function::All,
        Function::ArgMax,
        Function::ArgMin,
        Function::Lt,
        Function::Le,
        Function::Gt,
        Function::Ge,
        Function::Eq,
        Function::Diff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Join => "JOIN",
            Function::R => "R",
            Function::And => "AND",
            Function::Or => "OR",
            Function::Values => "VALUES",
            Function::IsTrue => "IS_TRUE",
            Function::Count => "COUNT",
            Function::Distinct => "DISTINCT",
            Function::GroupCount => "GROUP_COUNT",
            Function::GroupSum => "GROUP_SUM",
            Function::All => "ALL",
            Function::ArgMax => "ARGMAX",
            Function::ArgMin => "ARGMIN",
            Function::Lt => "LT",
            Function::Le => "LE",
            Function::Gt => "GT",
            Function::Ge => "GE",
            Function::Eq => "EQ",
            Function::Diff => "DIFF",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> Arity {
        use Function::*;
        match self {
            Join => Arity::Exactly(2),
            R => Arity::Exactly(1),
            And | Or => Arity::AtLeast(2),
            Values | All => Arity::AtLeast(1),
            IsTrue => Arity::Exactly(3),
            Count | Distinct | GroupCount | ArgMax | ArgMin => Arity::Exactly(1),
            GroupSum | Diff | Lt | Le | Gt | Ge | Eq => Arity::Exactly(2),
        }
    }

    /// The five functions a core may use.
    pub fn is_core(self) -> bool {
        matches!(
            self,
            Function::Join | Function::R | Function::And | Function::Values | Function::IsTrue
        )
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            Function::Lt | Function::Le | Function::Gt | Function::Ge | Function::Eq
        )
    }

    pub fn is_extremum(self) -> bool {
        matches!(self, Function::ArgMax | Function::ArgMin)
    }

    /// Whether argument `idx` of this function is a relation slot.
    pub fn relation_slot(self, idx: usize) -> bool {
        matches!(
            (self, idx),
            (Function::Join, 0) | (Function::R, 0) | (Function::IsTrue, 1)
        )
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Function {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Function::from_name(s).ok_or_else(|| format!("unknown function `{s}`"))
    }
}

impl Serialize for Function {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Function {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Head of a call node: a concrete function, or a function-valued template
/// placeholder such as `compare` or `optimize`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Head {
    Func(Function),
    Slot(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SExpr {
    Call { head: Head, args: Vec<SExpr> },
    Entity(String),
    Relation(String),
    Number(u64),
    Placeholder(String),
}

impl SExpr {
    pub fn call(f: Function, args: Vec<SExpr>) -> SExpr {
        SExpr::Call {
            head: Head::Func(f),
            args,
        }
    }

    pub fn entity(id: impl Into<String>) -> SExpr {
        SExpr::Entity(id.into())
    }

    pub fn relation(id: impl Into<String>) -> SExpr {
        SExpr::Relation(id.into())
    }

    pub fn join(rel: SExpr, arg: SExpr) -> SExpr {
        SExpr::call(Function::Join, vec![rel, arg])
    }

    pub fn rev(rel: impl Into<String>) -> SExpr {
        SExpr::call(Function::R, vec![SExpr::relation(rel)])
    }

    pub fn and(args: Vec<SExpr>) -> SExpr {
        SExpr::call(Function::And, args)
    }

    pub fn function(&self) -> Option<Function> {
        match self {
            SExpr::Call {
                head: Head::Func(f), ..
            } => Some(*f),
            _ => None,
        }
    }

    pub fn args(&self) -> &[SExpr] {
        match self {
            SExpr::Call { args, .. } => args,
            _ => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, SExpr::Call { .. })
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SExpr)) {
        f(self);
        if let SExpr::Call { args, .. } = self {
            for a in args {
                a.walk(f);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    pub fn depth(&self) -> usize {
        match self {
            SExpr::Call { args, .. } => 1 + args.iter().map(SExpr::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    /// Names of every placeholder, leaf or head, in first-appearance order.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |n| {
            let name = match n {
                SExpr::Placeholder(p) => Some(p),
                SExpr::Call {
                    head: Head::Slot(s), ..
                } => Some(s),
                _ => None,
            };
            if let Some(name) = name {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        });
        out
    }

    pub fn entities(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let SExpr::Entity(e) = n {
                out.push(e.as_str());
            }
        });
        out
    }

    pub fn relations(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let SExpr::Relation(r) = n {
                out.push(r.as_str());
            }
        });
        out
    }

    /// Labels of every node for structural comparison: function names for
    /// calls, tokens for leaves.
    pub fn node_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            out.push(match n {
                SExpr::Call {
                    head: Head::Func(f), ..
                } => f.name().to_string(),
                SExpr::Call {
                    head: Head::Slot(s), ..
                } => s.clone(),
                SExpr::Entity(e) => e.clone(),
                SExpr::Relation(r) => r.clone(),
                SExpr::Number(n) => n.to_string(),
                SExpr::Placeholder(p) => p.clone(),
            })
        });
        out
    }

    /// Rewrites every leaf token through `f`, keeping the tree shape.
    pub fn map_leaves(&self, f: &mut impl FnMut(&SExpr) -> SExpr) -> SExpr {
        match self {
            SExpr::Call { head, args } => SExpr::Call {
                head: head.clone(),
                args: args.iter().map(|a| a.map_leaves(f)).collect(),
            },
            leaf => f(leaf),
        }
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Call { head, args } => {
                f.write_str("(")?;
                match head {
                    Head::Func(func) => f.write_str(func.name())?,
                    Head::Slot(s) => f.write_str(s)?,
                }
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            SExpr::Entity(s) | SExpr::Relation(s) | SExpr::Placeholder(s) => f.write_str(s),
            SExpr::Number(n) => write!(f, "{n}"),
        }
    }
}

/// Canonical single-space rendering.
pub fn print(e: &SExpr) -> String {
    e.to_string()
}

impl Serialize for SExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FATHER_CORE: &str = "(AND (JOIN (R father) Ludovico_II,_Marquess_of_Saluzzo) (JOIN instance_of common_name))";

    #[test]
    fn prints_canonically() {
        let messy = "( AND   (JOIN (R father)\n Ludovico_II,_Marquess_of_Saluzzo)(JOIN instance_of common_name) )";
        assert_eq!(print(&parse(messy).unwrap()), FATHER_CORE);
        assert_eq!(print(&parse("e1").unwrap()), "e1");
    }

    #[test]
    fn father_core_tree_shape() {
        let e = parse(FATHER_CORE).unwrap();
        // AND, JOIN, R, father, Ludovico, JOIN, instance_of, common_name
        assert_eq!(e.node_count(), 8);
        assert_eq!(e.relations(), vec!["father", "instance_of"]);
        assert_eq!(e.entities(), vec!["Ludovico_II,_Marquess_of_Saluzzo", "common_name"]);
    }

    #[test]
    fn placeholders_in_order() {
        let t = parse_template("(COUNT (compare (GROUP_SUM (GROUP_COUNT x1) (GROUP_COUNT x2)) number))").unwrap();
        assert_eq!(t.placeholders(), vec!["compare", "x1", "x2", "number"]);
    }

    #[test]
    fn function_names_round_trip() {
        for f in Function::ALL {
            assert_eq!(Function::from_name(f.name()), Some(f));
        }
    }
}
