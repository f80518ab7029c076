use thiserror::Error;

use super::{Aggregate, CmpOp, Element, Expr, Group, Projection, Query, Select, Term, TriplePattern};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at byte {offset}")]
pub struct SparqlParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Star,
    Plus,
    Op(CmpOp),
    Var(String),
    Iri(String),
    Int(u64),
    Word(String),
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, SparqlParseError> {
    Err(SparqlParseError {
        offset,
        message: message.into(),
    })
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, SparqlParseError> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let ws = |c: Option<&u8>| c.is_none_or(|c| c.is_ascii_whitespace());
    while i < b.len() {
        let c = b[i];
        let start = i;
        let single = match c {
            b'{' => Some(Tok::LBrace),
            b'}' => Some(Tok::RBrace),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'.' => Some(Tok::Dot),
            b'*' => Some(Tok::Star),
            b'+' => Some(Tok::Plus),
            b'=' => Some(Tok::Op(CmpOp::Eq)),
            _ => None,
        };
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if let Some(t) = single {
            out.push((start, t));
            i += 1;
            continue;
        }
        match c {
            b'<' if ws(b.get(i + 1)) => {
                out.push((start, Tok::Op(CmpOp::Lt)));
                i += 1;
            }
            b'<' if b.get(i + 1) == Some(&b'=') && ws(b.get(i + 2)) => {
                out.push((start, Tok::Op(CmpOp::Le)));
                i += 2;
            }
            b'<' => {
                let end = match text[i + 1..].find('>') {
                    Some(e) => i + 1 + e,
                    None => return err(start, "unterminated IRI"),
                };
                let iri = &text[i + 1..end];
                if iri.is_empty() || iri.chars().any(char::is_whitespace) {
                    return err(start, "malformed IRI");
                }
                out.push((start, Tok::Iri(iri.to_string())));
                i = end + 1;
            }
            b'>' => {
                if b.get(i + 1) == Some(&b'=') {
                    out.push((start, Tok::Op(CmpOp::Ge)));
                    i += 2;
                } else {
                    out.push((start, Tok::Op(CmpOp::Gt)));
                    i += 1;
                }
            }
            b'?' => {
                i += 1;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                if i == start + 1 {
                    return err(start, "empty variable name");
                }
                out.push((start, Tok::Var(text[start + 1..i].to_string())));
            }
            d if d.is_ascii_digit() => {
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                let n = text[start..i].parse().map_err(|_| SparqlParseError {
                    offset: start,
                    message: "integer out of range".into(),
                })?;
                out.push((start, Tok::Int(n)));
            }
            a if a.is_ascii_alphabetic() => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Word(text[start..i].to_ascii_uppercase())));
            }
            _ => {
                return err(
                    start,
                    format!("unexpected character `{}`", text[start..].chars().next().unwrap_or(' ')),
                )
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), SparqlParseError> {
        let off = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => err(off, format!("expected {what}")),
        }
    }

    fn word(&mut self, w: &str) -> Result<(), SparqlParseError> {
        self.expect(Tok::Word(w.to_string()), w)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x == w)
    }

    fn var(&mut self) -> Result<String, SparqlParseError> {
        let off = self.offset();
        match self.next() {
            Some(Tok::Var(v)) => Ok(v),
            _ => err(off, "expected a variable"),
        }
    }

    fn query(&mut self) -> Result<Query, SparqlParseError> {
        let q = if self.is_word("ASK") {
            self.pos += 1;
            Query::Ask(self.group()?)
        } else if self.is_word("SELECT") {
            Query::Select(self.select()?)
        } else {
            return err(self.offset(), "expected ASK or SELECT");
        };
        if self.pos < self.toks.len() {
            return err(self.offset(), "unexpected trailing input");
        }
        Ok(q)
    }

    fn select(&mut self) -> Result<Select, SparqlParseError> {
        self.word("SELECT")?;
        let distinct = self.is_word("DISTINCT");
        if distinct {
            self.pos += 1;
        }
        let mut projection = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Var(_)) => projection.push(Projection::Var(self.var()?)),
                Some(Tok::LParen) => {
                    self.pos += 1;
                    let agg = self.aggregate()?;
                    self.word("AS")?;
                    let v = self.var()?;
                    self.expect(Tok::RParen, "`)`")?;
                    projection.push(Projection::Agg(agg, v));
                }
                Some(Tok::Star) => return err(self.offset(), "unsupported form: SELECT *"),
                _ => break,
            }
        }
        if projection.is_empty() {
            return err(self.offset(), "empty projection");
        }
        self.word("WHERE")?;
        let pattern = self.group()?;
        let mut group_by = Vec::new();
        if self.is_word("GROUP") {
            self.pos += 1;
            self.word("BY")?;
            while let Some(Tok::Var(_)) = self.peek() {
                group_by.push(self.var()?);
            }
            if group_by.is_empty() {
                return err(self.offset(), "GROUP BY needs a variable");
            }
        }
        let mut having = None;
        if self.is_word("HAVING") {
            self.pos += 1;
            self.expect(Tok::LParen, "`(`")?;
            let lhs = self.operand()?;
            let off = self.offset();
            let op = match self.next() {
                Some(Tok::Op(op)) => op,
                _ => return err(off, "expected a comparison operator"),
            };
            let rhs = self.operand()?;
            self.expect(Tok::RParen, "`)`")?;
            having = Some(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(Select {
            distinct,
            projection,
            pattern,
            group_by,
            having,
        })
    }

    fn aggregate(&mut self) -> Result<Aggregate, SparqlParseError> {
        let off = self.offset();
        let name = match self.next() {
            Some(Tok::Word(w)) => w,
            _ => return err(off, "expected an aggregate"),
        };
        self.expect(Tok::LParen, "`(`")?;
        let agg = match name.as_str() {
            "COUNT" => {
                self.word("DISTINCT")?;
                Aggregate::CountDistinct(self.var()?)
            }
            "SUM" => Aggregate::Sum(self.var()?),
            "MAX" => Aggregate::Max(self.var()?),
            "MIN" => Aggregate::Min(self.var()?),
            other => return err(off, format!("unsupported aggregate `{other}`")),
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(agg)
    }

    fn operand(&mut self) -> Result<Expr, SparqlParseError> {
        let off = self.offset();
        match self.peek().cloned() {
            Some(Tok::Var(v)) => {
                self.pos += 1;
                Ok(Expr::Var(v))
            }
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Expr::Int(n))
            }
            Some(Tok::Word(_)) => Ok(Expr::Agg(self.aggregate()?)),
            Some(Tok::LParen) => {
                self.pos += 1;
                let a = self.operand()?;
                self.expect(Tok::Plus, "`+`")?;
                let b = self.operand()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Add(Box::new(a), Box::new(b)))
            }
            _ => err(off, "expected an operand"),
        }
    }

    fn term(&mut self) -> Result<Term, SparqlParseError> {
        let off = self.offset();
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Iri(i)) => Ok(Term::Iri(i)),
            Some(Tok::Int(n)) => Ok(Term::Int(n)),
            _ => err(off, "expected a term"),
        }
    }

    fn group(&mut self) -> Result<Group, SparqlParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut elements = Vec::new();
        loop {
            let off = self.offset();
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    return Ok(Group { elements });
                }
                None => return err(off, "unterminated group"),
                Some(Tok::Word(w)) if w == "VALUES" => {
                    self.pos += 1;
                    let var = self.var()?;
                    self.expect(Tok::LBrace, "`{`")?;
                    let mut values = Vec::new();
                    while !matches!(self.peek(), Some(Tok::RBrace) | None) {
                        match self.term()? {
                            Term::Var(_) => return err(off, "variables are not allowed in VALUES"),
                            t => values.push(t),
                        }
                    }
                    self.expect(Tok::RBrace, "`}`")?;
                    if values.is_empty() {
                        return err(off, "empty VALUES block");
                    }
                    elements.push(Element::Values { var, values });
                }
                Some(Tok::Word(w)) if w == "MINUS" => {
                    self.pos += 1;
                    elements.push(Element::Minus(self.group()?));
                }
                Some(Tok::Word(w)) if w == "OPTIONAL" || w == "FILTER" || w == "BIND" => {
                    return err(off, format!("unsupported clause {w}"));
                }
                Some(Tok::LBrace) => {
                    if matches!(self.toks.get(self.pos + 1), Some((_, Tok::Word(w))) if w == "SELECT") {
                        self.pos += 1;
                        let sel = self.select()?;
                        self.expect(Tok::RBrace, "`}`")?;
                        elements.push(Element::SubSelect(Box::new(sel)));
                    } else {
                        let mut branches = vec![self.group()?];
                        while self.is_word("UNION") {
                            self.pos += 1;
                            branches.push(self.group()?);
                        }
                        if branches.len() < 2 {
                            return err(off, "nested group without UNION");
                        }
                        elements.push(Element::Union(branches));
                    }
                }
                _ => {
                    let s = self.term()?;
                    let poff = self.offset();
                    let p = match self.next() {
                        Some(Tok::Iri(p)) => p,
                        _ => return err(poff, "predicate must be an IRI"),
                    };
                    let o = self.term()?;
                    self.expect(Tok::Dot, "`.`")?;
                    elements.push(Element::Triple(TriplePattern { s, p, o }));
                }
            }
        }
    }
}

/// Parses the subset produced by [`super::to_sparql`], tolerating whitespace
/// variation.
pub fn parse_sparql_subset(text: &str) -> Result<Query, SparqlParseError> {
    let toks = tokenize(text)?;
    Parser {
        toks,
        pos: 0,
        end: text.len(),
    }
    .query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_star_is_rejected() {
        let e = parse_sparql_subset("SELECT * WHERE { ?x <p> <o> . }").unwrap_err();
        assert!(e.message.contains("SELECT *"));
        assert_eq!(e.offset, 7);
    }

    #[test]
    fn ask_with_two_triples() {
        let q = parse_sparql_subset("ASK {\n  <a> <p> <b> .\n  <b> <p> <c> .\n}").unwrap();
        assert_eq!(q.pattern().elements.len(), 2);
    }

    #[test]
    fn operators_versus_iris() {
        let q = parse_sparql_subset("SELECT ?x WHERE { ?w1 <r> ?x . } GROUP BY ?x HAVING (COUNT(DISTINCT ?w1) <= 3)")
            .unwrap();
        match q {
            Query::Select(s) => assert!(matches!(s.having, Some(Expr::Cmp(CmpOp::Le, ..)))),
            _ => unreachable!(),
        }
        assert!(
            parse_sparql_subset("SELECT ?x WHERE { ?w1 <r> ?x . } GROUP BY ?x HAVING (COUNT(DISTINCT ?w1) < 3)")
                .is_ok()
        );
    }

    #[test]
    fn out_of_subset_is_located() {
        let e = parse_sparql_subset("SELECT ?x WHERE { OPTIONAL { ?x <p> ?y . } }").unwrap_err();
        assert_eq!(e.offset, 18);
        assert!(parse_sparql_subset("SELECT ?x WHERE { ?x ?p ?y . }").is_err());
    }
}
