use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalResult;
use crate::kg::EntityId;
use crate::sexpr::{type_check, SExpr, ValueType};
use crate::template::QuestionType;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GoldAnswer {
    Entities(BTreeSet<EntityId>),
    Boolean(bool),
    Integer(u64),
}

impl GoldAnswer {
    pub fn from_result(r: &EvalResult) -> Option<Self> {
        match r {
            EvalResult::EntitySet(s) => Some(GoldAnswer::Entities(s.clone())),
            EvalResult::Boolean(b) => Some(GoldAnswer::Boolean(*b)),
            EvalResult::Integer(n) => Some(GoldAnswer::Integer(*n)),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            GoldAnswer::Entities(_) => "entities",
            GoldAnswer::Boolean(_) => "boolean",
            GoldAnswer::Integer(_) => "integer",
        }
    }
}

/// The answer kind each question type must carry.
pub fn expected_kind(t: QuestionType) -> &'static str {
    match t {
        QuestionType::Verify => "boolean",
        QuestionType::Count | QuestionType::CompareAndCount => "integer",
        _ => "entities",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTurn {
    pub q: String,
    pub gold: GoldAnswer,
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sexpr: Option<SExpr>,
    /// Standalone rewrite of `q` for follow-up turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<String>,
}

impl GoldTurn {
    pub fn resolved_question(&self) -> &str {
        self.resolved.as_deref().unwrap_or(&self.q)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub turns: Vec<GoldTurn>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogFile {
    pub dialogs: Vec<Dialog>,
}

#[derive(Debug, Error)]
pub enum DialogError {
    #[error("dialog {dialog} turn {turn}: {message}")]
    Invalid {
        dialog: usize,
        turn: usize,
        message: String,
    },
    #[error("malformed dialog file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl DialogFile {
    pub fn turn_count(&self) -> usize {
        self.dialogs.iter().map(|d| d.turns.len()).sum()
    }

    pub fn turns(&self) -> impl Iterator<Item = &GoldTurn> {
        self.dialogs.iter().flat_map(|d| &d.turns)
    }

    /// Checks that every gold answer has the kind its type requires and
    /// that gold forms type-check to the same kind.
    pub fn validate(&self) -> Result<(), DialogError> {
        for (d, dialog) in self.dialogs.iter().enumerate() {
            for (t, turn) in dialog.turns.iter().enumerate() {
                let bad = |message: String| DialogError::Invalid {
                    dialog: d,
                    turn: t,
                    message,
                };
                if turn.q.trim().is_empty() {
                    return Err(bad("empty question".into()));
                }
                let want = expected_kind(turn.qtype);
                if turn.gold.kind() != want {
                    return Err(bad(format!(
                        "{} question needs a {want} answer, got {}",
                        turn.qtype,
                        turn.gold.kind()
                    )));
                }
                if let Some(e) = &turn.gold_sexpr {
                    let ty = type_check(e).map_err(|err| bad(format!("gold form: {err}")))?;
                    let kind = match ty {
                        ValueType::EntitySet => "entities",
                        ValueType::Boolean => "boolean",
                        ValueType::Integer => "integer",
                        other => return Err(bad(format!("gold form has unsupported type {other:?}"))),
                    };
                    if kind != want {
                        return Err(bad(format!("gold form yields {kind}, expected {want}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DialogError> {
        let f: DialogFile = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, DialogError> {
        let text = std::fs::read_to_string(path).map_err(|source| DialogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dialog files serialize")
    }
}
