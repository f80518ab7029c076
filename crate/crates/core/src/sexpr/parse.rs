use thiserror::Error;

use super::{Function, Head, SExpr};

/// Nesting bound for the recursive descent.
pub const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty input")]
    Empty,
    #[error("unbalanced parenthesis at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("empty argument list at byte {offset}")]
    EmptyList { offset: usize },
    #[error("call head at byte {offset} must be a function name")]
    HeadNotSymbol { offset: usize },
    #[error("{function} takes {expected} arguments, found {found} (byte {offset})")]
    Arity {
        function: Function,
        expected: String,
        found: usize,
        offset: usize,
    },
    #[error("unexpected trailing input at byte {offset}")]
    Trailing { offset: usize },
    #[error("nesting deeper than {MAX_DEPTH} at byte {offset}")]
    TooDeep { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Empty => None,
            ParseError::Unbalanced { offset }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::EmptyList { offset }
            | ParseError::HeadNotSymbol { offset }
            | ParseError::Arity { offset, .. }
            | ParseError::Trailing { offset }
            | ParseError::TooDeep { offset } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            out.push((i, Tok::Open));
            i += 1;
        } else if c == b')' {
            out.push((i, Tok::Close));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                i += 1;
            }
            out.push((start, Tok::Atom(&text[start..i])));
        }
    }
    out
}

fn check_balance(toks: &[(usize, Tok<'_>)]) -> Result<(), ParseError> {
    let mut open: Vec<usize> = Vec::new();
    for (off, t) in toks {
        match t {
            Tok::Open => open.push(*off),
            Tok::Close => {
                if open.pop().is_none() {
                    return Err(ParseError::Unbalanced { offset: *off });
                }
            }
            Tok::Atom(_) => {}
        }
    }
    match open.first() {
        Some(off) => Err(ParseError::Unbalanced { offset: *off }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Strict,
    Lenient,
    Template,
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    mode: Mode,
}

fn is_placeholder_leaf(tok: &str) -> bool {
    tok == "number" || (tok.len() > 1 && tok.starts_with('x') && tok[1..].bytes().all(|b| b.is_ascii_digit()))
}

fn is_placeholder_head(tok: &str) -> bool {
    matches!(tok, "compare" | "optimize")
}

impl<'a> Parser<'a> {
    fn leaf(&self, tok: &str, relation_slot: bool) -> SExpr {
        if tok.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = tok.parse() {
                return SExpr::Number(n);
            }
        }
        if self.mode == Mode::Template && is_placeholder_leaf(tok) {
            return SExpr::Placeholder(tok.to_string());
        }
        if relation_slot {
            SExpr::Relation(tok.to_string())
        } else {
            SExpr::Entity(tok.to_string())
        }
    }

    fn expr(&mut self, depth: usize, relation_slot: bool) -> Result<SExpr, ParseError> {
        let (off, tok) = self.toks[self.pos].clone();
        match tok {
            Tok::Atom(a) => {
                self.pos += 1;
                Ok(self.leaf(a, relation_slot))
            }
            Tok::Close => Err(ParseError::Unbalanced { offset: off }),
            Tok::Open => {
                if depth >= MAX_DEPTH {
                    return Err(ParseError::TooDeep { offset: off });
                }
                self.pos += 1;
                let (head_off, head_tok) = self.toks[self.pos].clone();
                let head = match head_tok {
                    Tok::Close => return Err(ParseError::EmptyList { offset: off }),
                    Tok::Open => return Err(ParseError::HeadNotSymbol { offset: head_off }),
                    Tok::Atom(name) => {
                        if let Some(f) = Function::from_name(name) {
                            Head::Func(f)
                        } else if self.mode == Mode::Template && is_placeholder_head(name) {
                            Head::Slot(name.to_string())
                        } else {
                            return Err(ParseError::UnknownFunction {
                                name: name.to_string(),
                                offset: head_off,
                            });
                        }
                    }
                };
                self.pos += 1;
                let mut args = Vec::new();
                loop {
                    match self.toks[self.pos].1 {
                        Tok::Close => {
                            self.pos += 1;
                            break;
                        }
                        _ => {
                            let rel = match &head {
                                Head::Func(f) => f.relation_slot(args.len()),
                                Head::Slot(_) => false,
                            };
                            args.push(self.expr(depth + 1, rel)?);
                        }
                    }
                }
                if let Head::Func(f) = head {
                    if args.is_empty() {
                        return Err(ParseError::EmptyList { offset: off });
                    }
                    if self.mode != Mode::Lenient && !f.arity().accepts(args.len()) {
                        return Err(ParseError::Arity {
                            function: f,
                            expected: f.arity().to_string(),
                            found: args.len(),
                            offset: off,
                        });
                    }
                }
                Ok(SExpr::Call { head, args })
            }
        }
    }
}

fn run(text: &str, mode: Mode) -> Result<SExpr, ParseError> {
    let toks = tokenize(text);
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    check_balance(&toks)?;
    let mut p = Parser { toks, pos: 0, mode };
    let e = p.expr(0, false)?;
    if p.pos < p.toks.len() {
        return Err(ParseError::Trailing {
            offset: p.toks[p.pos].0,
        });
    }
    Ok(e)
}

/// Parses an executable expression. Leaves are classified by slot: the
/// first argument of `JOIN`, the argument of `R` and the middle argument of
/// `IS_TRUE` are relations, digit-only tokens are numbers, everything else
/// is an entity.
pub fn parse(text: &str) -> Result<SExpr, ParseError> {
    run(text, Mode::Strict)
}

/// Like [`parse`] but without arity validation; the syntax repairer works on
/// trees that still carry surplus arguments.
pub fn parse_lenient(text: &str) -> Result<SExpr, ParseError> {
    run(text, Mode::Lenient)
}

/// Parses a template body: `x1`, `x2`, ... and `number` become placeholder
/// leaves, `compare` and `optimize` placeholder heads.
pub fn parse_template(text: &str) -> Result<SExpr, ParseError> {
    run(text, Mode::Template)
}
