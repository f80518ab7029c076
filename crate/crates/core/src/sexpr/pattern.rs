use std::sync::OnceLock;

use serde::Serialize;

use super::{parse, Function, Head, SExpr};

/// One of the twelve recognized core shapes. In a skeleton every `x` is a
/// wildcard that binds a single leaf, and `(VALUES x ...)` binds a VALUES
/// node with one or more entity leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CorePattern {
    pub id: u8,
    pub skeleton: &'static str,
}

pub const CORE_PATTERNS: [CorePattern; 12] = [
    CorePattern {
        id: 1,
        skeleton: "(IS_TRUE x x x)",
    },
    CorePattern {
        id: 2,
        skeleton: "(JOIN x x)",
    },
    CorePattern {
        id: 3,
        skeleton: "(JOIN (R x) x)",
    },
    CorePattern {
        id: 4,
        skeleton: "(AND (JOIN x x) (JOIN x x))",
    },
    CorePattern {
        id: 5,
        skeleton: "(AND (JOIN x (VALUES x ...)) (JOIN x x))",
    },
    CorePattern {
        id: 6,
        skeleton: "(AND (JOIN (R x) x) (JOIN x x))",
    },
    CorePattern {
        id: 7,
        skeleton: "(AND (JOIN (R x) (VALUES x ...)) (JOIN x x))",
    },
    CorePattern {
        id: 8,
        skeleton: "(AND (JOIN x (JOIN x x)) (JOIN x x))",
    },
    CorePattern {
        id: 9,
        skeleton: "(AND (JOIN (R x) (JOIN x x)) (JOIN x x))",
    },
    CorePattern {
        id: 10,
        skeleton: "(AND (JOIN x x) (JOIN x x) (JOIN x x))",
    },
    CorePattern {
        id: 11,
        skeleton: "(AND (JOIN (R x) x) (JOIN (R x) x) (JOIN x x))",
    },
    CorePattern {
        id: 12,
        skeleton: "(AND (JOIN (R x) x) (JOIN x x) (JOIN (R x) x))",
    },
];

impl CorePattern {
    pub fn by_id(id: u8) -> Option<CorePattern> {
        CORE_PATTERNS.iter().copied().find(|p| p.id == id)
    }

    /// The skeleton as a tree; wildcards come out as ordinary leaves.
    pub fn tree(&self) -> &'static SExpr {
        &skeletons()[(self.id - 1) as usize]
    }

    pub fn matches(&self, e: &SExpr) -> bool {
        shape_matches(self.tree(), e)
    }

    /// Number of single-leaf wildcards, counting a VALUES group as one.
    pub fn slot_count(&self) -> usize {
        let mut n = 0;
        count_slots(self.tree(), &mut n);
        n
    }
}

fn count_slots(skel: &SExpr, n: &mut usize) {
    match skel {
        SExpr::Call {
            head: Head::Func(Function::Values),
            ..
        } => *n += 1,
        SExpr::Call { args, .. } => args.iter().for_each(|a| count_slots(a, n)),
        _ => *n += 1,
    }
}

fn skeletons() -> &'static Vec<SExpr> {
    static TREES: OnceLock<Vec<SExpr>> = OnceLock::new();
    TREES.get_or_init(|| {
        CORE_PATTERNS
            .iter()
            .map(|p| parse(p.skeleton).expect("builtin skeleton parses"))
            .collect()
    })
}

fn shape_matches(skel: &SExpr, e: &SExpr) -> bool {
    match (skel, e) {
        (SExpr::Entity(_), SExpr::Entity(_)) | (SExpr::Relation(_), SExpr::Relation(_)) => true,
        (
            SExpr::Call {
                head: Head::Func(Function::Values),
                ..
            },
            SExpr::Call {
                head: Head::Func(Function::Values),
                args,
            },
        ) => !args.is_empty() && args.iter().all(|a| matches!(a, SExpr::Entity(_))),
        (
            SExpr::Call {
                head: Head::Func(f),
                args: sargs,
            },
            SExpr::Call {
                head: Head::Func(g),
                args,
            },
        ) => f == g && sargs.len() == args.len() && sargs.iter().zip(args).all(|(s, a)| shape_matches(s, a)),
        _ => false,
    }
}

/// Lowest-numbered pattern whose skeleton matches `e`.
pub fn match_core_pattern(e: &SExpr) -> Option<u8> {
    CORE_PATTERNS.iter().find(|p| p.matches(e)).map(|p| p.id)
}

/// True iff every function node uses a core function.
pub fn is_core(e: &SExpr) -> bool {
    let mut ok = true;
    e.walk(&mut |n| match n {
        SExpr::Call {
            head: Head::Func(f), ..
        } => ok &= f.is_core(),
        SExpr::Call {
            head: Head::Slot(_), ..
        } => ok = false,
        _ => {}
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeletons_match_themselves() {
        for p in CORE_PATTERNS {
            let t = parse(p.skeleton).unwrap();
            assert!(is_core(&t), "{}", p.skeleton);
            assert_eq!(match_core_pattern(&t), Some(p.id), "{}", p.skeleton);
        }
    }

    #[test]
    fn documented_examples() {
        assert_eq!(match_core_pattern(&parse("(IS_TRUE x y z)").unwrap()), Some(1));
        assert_eq!(match_core_pattern(&parse("(JOIN (R r) e)").unwrap()), Some(3));
        assert_eq!(match_core_pattern(&parse("(COUNT (JOIN a b))").unwrap()), None);
        let b =
            parse("(AND (JOIN (R father) Ludovico_II,_Marquess_of_Saluzzo) (JOIN instance_of common_name))").unwrap();
        assert_eq!(match_core_pattern(&b), Some(6));
        assert!(is_core(&b));
        assert!(!is_core(&parse("(OR a b)").unwrap()));
    }

    #[test]
    fn values_groups() {
        let e = parse("(AND (JOIN (R field_of_this_occupation) (VALUES a b c)) (JOIN instance_of sport))").unwrap();
        assert_eq!(match_core_pattern(&e), Some(7));
        assert_eq!(CorePattern::by_id(7).unwrap().slot_count(), 4);
    }

    #[test]
    fn wildcards_bind_leaves_only() {
        // a nested join is pattern 8, not pattern 4 with a subtree binding
        let e = parse("(AND (JOIN p (JOIN q e)) (JOIN instance_of c))").unwrap();
        assert_eq!(match_core_pattern(&e), Some(8));
        assert_eq!(match_core_pattern(&parse("(JOIN p (JOIN q e))").unwrap()), None);
    }
}
