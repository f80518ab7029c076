use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Function, Head, SExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    EntitySet,
    ValueSet,
    PairSet,
    GroupedCounts,
    Boolean,
    Integer,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::EntitySet => "entity set",
            ValueType::ValueSet => "value set",
            ValueType::PairSet => "pair set",
            ValueType::GroupedCounts => "grouped counts",
            ValueType::Boolean => "boolean",
            ValueType::Integer => "integer",
        };
        f.write_str(s)
    }
}

/// A type error located by the child-index path from the root.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("type error at {}: {message}", render_path(.path))]
pub struct TypeError {
    pub path: Vec<usize>,
    pub message: String,
}

fn render_path(path: &[usize]) -> String {
    if path.is_empty() {
        "root".to_string()
    } else {
        path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    }
}

struct Checker {
    path: Vec<usize>,
}

impl Checker {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, TypeError> {
        Err(TypeError {
            path: self.path.clone(),
            message: message.into(),
        })
    }

    fn child(&mut self, idx: usize, e: &SExpr) -> Result<ValueType, TypeError> {
        self.path.push(idx);
        let r = self.check(e)?;
        self.path.pop();
        Ok(r)
    }

    fn expect(&mut self, idx: usize, e: &SExpr, want: &[ValueType]) -> Result<ValueType, TypeError> {
        let got = self.child(idx, e)?;
        if want.contains(&got) {
            Ok(got)
        } else {
            self.path.push(idx);
            let names: Vec<String> = want.iter().map(|t| t.to_string()).collect();
            let r = self.err(format!("expected {}, found {got}", names.join(" or ")));
            self.path.pop();
            r
        }
    }

    fn relation_leaf(&mut self, idx: usize, e: &SExpr) -> Result<(), TypeError> {
        if matches!(e, SExpr::Relation(_)) {
            Ok(())
        } else {
            self.path.push(idx);
            let r = self.err(format!("expected a relation, found `{e}`"));
            self.path.pop();
            r
        }
    }

    fn check(&mut self, e: &SExpr) -> Result<ValueType, TypeError> {
        use Function::*;
        use ValueType::*;
        match e {
            SExpr::Entity(_) => Ok(EntitySet),
            SExpr::Number(_) => Ok(Integer),
            SExpr::Relation(r) => self.err(format!("relation `{r}` outside a relation slot")),
            SExpr::Placeholder(p) => self.err(format!("unassigned placeholder `{p}`")),
            SExpr::Call {
                head: Head::Slot(s), ..
            } => self.err(format!("unassigned function placeholder `{s}`")),
            SExpr::Call {
                head: Head::Func(f),
                args,
            } => {
                if !f.arity().accepts(args.len()) {
                    return self.err(format!("{f} takes {} arguments, found {}", f.arity(), args.len()));
                }
                match f {
                    Join => {
                        match &args[0] {
                            SExpr::Relation(_) => {}
                            other => {
                                self.expect(0, other, &[PairSet])?;
                            }
                        }
                        self.expect(1, &args[1], &[EntitySet])?;
                        Ok(EntitySet)
                    }
                    R => {
                        self.relation_leaf(0, &args[0])?;
                        Ok(PairSet)
                    }
                    And | Or | Diff => {
                        for (i, a) in args.iter().enumerate() {
                            self.expect(i, a, &[EntitySet])?;
                        }
                        Ok(EntitySet)
                    }
                    Values => {
                        if args.iter().all(|a| matches!(a, SExpr::Entity(_))) {
                            Ok(EntitySet)
                        } else if args.iter().all(|a| matches!(a, SExpr::Number(_))) {
                            Ok(ValueSet)
                        } else {
                            self.err("VALUES arguments must be all entities or all numbers")
                        }
                    }
                    IsTrue => {
                        for (i, a) in args.iter().enumerate() {
                            let ok = if i == 1 {
                                matches!(a, SExpr::Relation(_))
                            } else {
                                matches!(a, SExpr::Entity(_))
                            };
                            if !ok {
                                self.path.push(i);
                                let r = self.err(format!("IS_TRUE slot {i} cannot hold `{a}`"));
                                self.path.pop();
                                return r;
                            }
                        }
                        Ok(Boolean)
                    }
                    All => {
                        for (i, a) in args.iter().enumerate() {
                            self.expect(i, a, &[Boolean])?;
                        }
                        Ok(Boolean)
                    }
                    Count => {
                        self.expect(0, &args[0], &[EntitySet, ValueSet, GroupedCounts])?;
                        Ok(Integer)
                    }
                    Distinct => {
                        self.expect(0, &args[0], &[EntitySet])?;
                        Ok(EntitySet)
                    }
                    GroupCount => {
                        self.expect(0, &args[0], &[EntitySet])?;
                        Ok(GroupedCounts)
                    }
                    GroupSum => {
                        self.expect(0, &args[0], &[GroupedCounts])?;
                        self.expect(1, &args[1], &[GroupedCounts])?;
                        Ok(GroupedCounts)
                    }
                    ArgMax | ArgMin => {
                        self.expect(0, &args[0], &[GroupedCounts])?;
                        Ok(EntitySet)
                    }
                    Lt | Le | Gt | Ge | Eq => {
                        self.expect(0, &args[0], &[GroupedCounts])?;
                        match &args[1] {
                            SExpr::Number(_) => {}
                            other => {
                                self.expect(1, other, &[EntitySet])?;
                            }
                        }
                        Ok(EntitySet)
                    }
                }
            }
        }
    }
}

/// Static result type of an executable expression.
pub fn type_check(e: &SExpr) -> Result<ValueType, TypeError> {
    Checker { path: Vec::new() }.check(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;

    fn ty(s: &str) -> Result<ValueType, TypeError> {
        type_check(&parse(s).unwrap())
    }

    #[test]
    fn sibling_count_core() {
        assert_eq!(
            ty("(COUNT (AND (JOIN (R brother) Gian_Gabriele_I_of_Saluzzo) (JOIN instance_of common_name)))"),
            Ok(ValueType::Integer)
        );
    }

    #[test]
    fn signatures() {
        assert_eq!(ty("(ALL (IS_TRUE a p b))"), Ok(ValueType::Boolean));
        assert_eq!(ty("(VALUES 1 2)"), Ok(ValueType::ValueSet));
        assert_eq!(ty("(VALUES a b)"), Ok(ValueType::EntitySet));
        assert_eq!(ty("(R p)"), Ok(ValueType::PairSet));
        assert_eq!(
            ty("(GROUP_SUM (GROUP_COUNT (JOIN r e)) (GROUP_COUNT (JOIN q e)))"),
            Ok(ValueType::GroupedCounts)
        );
        assert_eq!(ty("(ARGMAX (GROUP_COUNT (JOIN r e)))"), Ok(ValueType::EntitySet));
        assert_eq!(ty("(COUNT (GROUP_COUNT (JOIN r e)))"), Ok(ValueType::Integer));
        assert_eq!(ty("(GT (GROUP_COUNT (JOIN r e)) (JOIN q f))"), Ok(ValueType::EntitySet));
        assert_eq!(ty("(DIFF a b)"), Ok(ValueType::EntitySet));
    }

    #[test]
    fn gt_needs_grouped_counts() {
        let err = ty("(GT (JOIN r e) 3)").unwrap_err();
        assert_eq!(err.path, vec![0]);
    }

    #[test]
    fn errors_are_located() {
        let err = ty("(AND (JOIN r e) (COUNT (JOIN r e)))").unwrap_err();
        assert_eq!(err.path, vec![1]);
        let err = ty("(VALUES a 1)").unwrap_err();
        assert!(err.path.is_empty());
        let err = ty("(ALL (IS_TRUE a p b) (JOIN r e))").unwrap_err();
        assert_eq!(err.path, vec![1]);
    }
}
