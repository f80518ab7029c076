//! Seeded generators for random graphs and well-typed expressions, shared by
//! the property tests, the acceptance suite and synthetic data generation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kg::{KnowledgeGraph, Triple};
use crate::sexpr::{Function, SExpr, ValueType};

/// Id pools for one generated graph. `ghost` is an entity id that never
/// occurs in a fact.
#[derive(Clone, Debug)]
pub struct Vocab {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub ghost: String,
}

impl Vocab {
    pub fn new(n_entities: usize, n_relations: usize) -> Self {
        Vocab {
            entities: (0..n_entities.max(1)).map(|i| format!("e{i}")).collect(),
            relations: (0..n_relations.max(1)).map(|i| format!("p{i}")).collect(),
            ghost: "ghost".into(),
        }
    }
}

pub fn random_graph<R: Rng>(rng: &mut R, vocab: &Vocab, n_facts: usize) -> KnowledgeGraph {
    let triples: Vec<Triple> = (0..n_facts)
        .map(|_| {
            Triple::new(
                vocab.entities.choose(rng).unwrap(),
                vocab.relations.choose(rng).unwrap(),
                vocab.entities.choose(rng).unwrap(),
            )
        })
        .collect();
    KnowledgeGraph::from_parts(triples, std::iter::empty()).expect("generated ids are valid")
}

/// Random well-typed expression generator over a vocabulary.
pub struct ExprGen<'a, R> {
    pub rng: &'a mut R,
    pub vocab: &'a Vocab,
}

impl<R: Rng> ExprGen<'_, R> {
    fn entity(&mut self) -> SExpr {
        if self.rng.gen_ratio(1, 20) {
            SExpr::entity(self.vocab.ghost.clone())
        } else {
            SExpr::entity(self.vocab.entities.choose(self.rng).unwrap().clone())
        }
    }

    fn relation(&mut self) -> SExpr {
        SExpr::relation(self.vocab.relations.choose(self.rng).unwrap().clone())
    }

    fn rel_or_rev(&mut self) -> SExpr {
        let r = self.relation();
        if self.rng.gen_bool(0.5) {
            SExpr::call(Function::R, vec![r])
        } else {
            r
        }
    }

    fn values(&mut self) -> SExpr {
        let n = self.rng.gen_range(1..=3);
        SExpr::call(Function::Values, (0..n).map(|_| self.entity()).collect())
    }

    fn number(&mut self) -> SExpr {
        SExpr::Number(self.rng.gen_range(0..5))
    }

    /// Entity-set expression built only from core functions.
    pub fn core(&mut self, depth: usize) -> SExpr {
        let choice = if depth == 0 {
            self.rng.gen_range(0..2)
        } else {
            self.rng.gen_range(0..5)
        };
        match choice {
            0 => self.entity(),
            1 => self.values(),
            2 | 3 => {
                let r = self.rel_or_rev();
                SExpr::join(r, self.core(depth - 1))
            }
            _ => {
                let n = self.rng.gen_range(2..=3);
                SExpr::and((0..n).map(|_| self.core(depth - 1)).collect())
            }
        }
    }

    /// A core whose first conjunct is a JOIN, valid under GROUP_COUNT.
    pub fn grouped_core(&mut self, depth: usize) -> SExpr {
        let r = self.rel_or_rev();
        let primary = SExpr::join(r, self.core(depth.saturating_sub(1)));
        let extra = self.rng.gen_range(0..=2);
        if extra == 0 {
            primary
        } else {
            let mut args = vec![primary];
            args.extend((0..extra).map(|_| self.core(depth.saturating_sub(1))));
            SExpr::and(args)
        }
    }

    pub fn grouped(&mut self, depth: usize) -> SExpr {
        if depth > 1 && self.rng.gen_ratio(1, 3) {
            SExpr::call(
                Function::GroupSum,
                vec![self.grouped(depth - 1), self.grouped(depth - 1)],
            )
        } else {
            SExpr::call(Function::GroupCount, vec![self.grouped_core(depth)])
        }
    }

    pub fn entity_set(&mut self, depth: usize) -> SExpr {
        if depth == 0 {
            return if self.rng.gen_bool(0.7) {
                self.entity()
            } else {
                self.values()
            };
        }
        let d = depth - 1;
        match self.rng.gen_range(0..11) {
            0 => self.entity(),
            1 => self.values(),
            2 | 3 => {
                let r = self.rel_or_rev();
                SExpr::join(r, self.entity_set(d))
            }
            4 => {
                let n = self.rng.gen_range(2..=3);
                SExpr::and((0..n).map(|_| self.entity_set(d)).collect())
            }
            5 => SExpr::call(Function::Or, vec![self.entity_set(d), self.entity_set(d)]),
            6 => SExpr::call(Function::Diff, vec![self.entity_set(d), self.entity_set(d)]),
            7 => SExpr::call(Function::Distinct, vec![self.entity_set(d)]),
            8 => {
                let f = *[Function::ArgMax, Function::ArgMin].choose(self.rng).unwrap();
                SExpr::call(f, vec![self.grouped(d)])
            }
            _ => {
                let f = *[Function::Lt, Function::Le, Function::Gt, Function::Ge, Function::Eq]
                    .choose(self.rng)
                    .unwrap();
                let rhs = if self.rng.gen_bool(0.6) {
                    self.number()
                } else {
                    self.entity_set(d.saturating_sub(1))
                };
                SExpr::call(f, vec![self.grouped(d), rhs])
            }
        }
    }

    pub fn boolean(&mut self, depth: usize) -> SExpr {
        let is_true = |g: &mut Self| {
            let (s, r, o) = (g.entity(), g.relation(), g.entity());
            SExpr::call(Function::IsTrue, vec![s, r, o])
        };
        if depth == 0 || self.rng.gen_bool(0.4) {
            is_true(self)
        } else {
            let n = self.rng.gen_range(1..=3);
            SExpr::call(Function::All, (0..n).map(|_| self.boolean(depth - 1)).collect())
        }
    }

    pub fn of_type(&mut self, ty: ValueType, depth: usize) -> SExpr {
        match ty {
            ValueType::EntitySet => self.entity_set(depth),
            ValueType::GroupedCounts => self.grouped(depth.max(1)),
            ValueType::Boolean => self.boolean(depth),
            ValueType::ValueSet => {
                let n = self.rng.gen_range(1..=4);
                SExpr::call(Function::Values, (0..n).map(|_| self.number()).collect())
            }
            ValueType::Integer => {
                let arg = match self.rng.gen_range(0..4) {
                    0 => self.grouped(depth.max(1)),
                    1 => self.of_type(ValueType::ValueSet, 0),
                    _ => self.entity_set(depth.saturating_sub(1)),
                };
                SExpr::call(Function::Count, vec![arg])
            }
            ValueType::PairSet => SExpr::call(Function::R, vec![self.relation()]),
        }
    }

    /// A root expression of any type the SPARQL bridge can express.
    pub fn root(&mut self, depth: usize) -> SExpr {
        let ty = *[
            ValueType::EntitySet,
            ValueType::EntitySet,
            ValueType::EntitySet,
            ValueType::Integer,
            ValueType::GroupedCounts,
            ValueType::Boolean,
            ValueType::ValueSet,
        ]
        .choose(self.rng)
        .unwrap();
        self.of_type(ty, depth)
    }
}

/// One random (expression, graph) pair with at most `max_entities` entities.
pub fn random_case<R: Rng>(rng: &mut R, max_entities: usize) -> (SExpr, KnowledgeGraph) {
    let n = rng.gen_range(2..=max_entities.max(2));
    let vocab = Vocab::new(n, rng.gen_range(1..=4));
    let facts = rng.gen_range(0..=n * 3);
    let g = random_graph(rng, &vocab, facts);
    let depth = rng.gen_range(0..=4);
    let e = ExprGen { rng, vocab: &vocab }.root(depth);
    (e, g)
}
