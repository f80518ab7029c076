//! In-memory knowledge graph: the fact store plus label dictionaries used for
//! linking.
//!
//! Facts are kept in a sorted set with forward `(head, relation) -> tails` and
//! reverse `(tail, relation) -> heads` indexes. The graph is immutable once
//! built; every lookup on an unknown id yields an empty set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// (node, relation) to the set of neighbours in one direction.
pub type AdjacencyIndex = BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl RelationId {
    pub fn new(id: impl Into<String>) -> Self {
        RelationId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Triple {
            head: EntityId::new(head),
            relation: RelationId::new(relation),
            tail: EntityId::new(tail),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Entity,
    Relation,
}

impl LabelKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "entity" => Some(LabelKind::Entity),
            "relation" => Some(LabelKind::Relation),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file} line {line}: {message}")]
    Ingestion { file: String, line: usize, message: String },
    #[error("token `{0}` is used both as an entity and as a relation")]
    NamespaceClash(String),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
}

/// Counts reported after ingesting a triple file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub duplicates: usize,
    pub skipped: usize,
    pub labels: usize,
}

/// Identifiers must survive both the S-expression and the SPARQL renderings
/// unchanged, so whitespace, brackets and all-digit tokens are refused.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.bytes().all(|b| b.is_ascii_digit())
        && !id
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '<' | '>' | '"' | '{' | '}'))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<EntityId, Vec<String>>,
    relations: BTreeMap<RelationId, Vec<String>>,
    facts: BTreeSet<Triple>,
    forward: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    reverse: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

static EMPTY: BTreeSet<EntityId> = BTreeSet::new();

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from triples and `(id, kind, label)` rows.
    pub fn from_parts<'a>(
        triples: impl IntoIterator<Item = Triple>,
        labels: impl IntoIterator<Item = (&'a str, LabelKind, &'a str)>,
    ) -> Result<Self, KgError> {
        let mut g = KnowledgeGraph::new();
        for t in triples {
            g.insert(t)?;
        }
        for (id, kind, label) in labels {
            g.add_label(id, kind, label).map_err(|message| KgError::Ingestion {
                file: "<memory>".into(),
                line: 0,
                message,
            })?;
        }
        Ok(g)
    }

    /// Inserts a fact; returns false when it was already present.
    pub fn insert(&mut self, t: Triple) -> Result<bool, KgError> {
        for id in [t.head.as_str(), t.relation.as_str(), t.tail.as_str()] {
            if !is_valid_id(id) {
                return Err(KgError::InvalidId(id.to_string()));
            }
        }
        if self.relations.contains_key(&RelationId(t.head.0.clone())) {
            return Err(KgError::NamespaceClash(t.head.0.clone()));
        }
        if self.relations.contains_key(&RelationId(t.tail.0.clone())) {
            return Err(KgError::NamespaceClash(t.tail.0.clone()));
        }
        if self.entities.contains_key(&EntityId(t.relation.0.clone())) {
            return Err(KgError::NamespaceClash(t.relation.0.clone()));
        }
        if self.facts.contains(&t) {
            return Ok(false);
        }
        self.entities.entry(t.head.clone()).or_default();
        self.entities.entry(t.tail.clone()).or_default();
        self.relations.entry(t.relation.clone()).or_default();
        self.forward
            .entry((t.head.clone(), t.relation.clone()))
            .or_default()
            .insert(t.tail.clone());
        self.reverse
            .entry((t.tail.clone(), t.relation.clone()))
            .or_default()
            .insert(t.head.clone());
        self.facts.insert(t);
        Ok(true)
    }

    fn add_label(&mut self, id: &str, kind: LabelKind, label: &str) -> Result<(), String> {
        let label = label.trim();
        if label.is_empty() {
            return Err(format!("empty label for `{id}`"));
        }
        let slot = match kind {
            LabelKind::Entity => self.entities.get_mut(&EntityId::new(id)),
            LabelKind::Relation => self.relations.get_mut(&RelationId::new(id)),
        };
        match slot {
            Some(labels) => {
                if !labels.iter().any(|l| l == label) {
                    labels.push(label.to_string());
                }
                Ok(())
            }
            None => Err(format!(
                "label references unknown {} `{id}`",
                match kind {
                    LabelKind::Entity => "entity",
                    LabelKind::Relation => "relation",
                }
            )),
        }
    }

    /// Loads a triple file and an optional labels file.
    pub fn load(triples: &Path, labels: Option<&Path>) -> Result<(Self, LoadReport), KgError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| KgError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let triple_text = read(triples)?;
        let label_text = match labels {
            Some(p) => Some(read(p)?),
            None => None,
        };
        Self::load_str(
            &triples.display().to_string(),
            &triple_text,
            labels.map(|p| p.display().to_string()).as_deref(),
            label_text.as_deref(),
        )
    }

    pub fn load_str(
        triple_name: &str,
        triple_text: &str,
        label_name: Option<&str>,
        label_text: Option<&str>,
    ) -> Result<(Self, LoadReport), KgError> {
        let mut g = KnowledgeGraph::new();
        let mut report = LoadReport::default();
        for (idx, line) in triple_text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                report.skipped += 1;
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Parse {
                    file: triple_name.to_string(),
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let t = Triple::new(fields[0].trim(), fields[1].trim(), fields[2].trim());
            let fresh = g.insert(t).map_err(|e| KgError::Parse {
                file: triple_name.to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
            if fresh {
                report.loaded += 1;
            } else {
                report.duplicates += 1;
            }
        }
        if let Some(text) = label_text {
            let file = label_name.unwrap_or("<labels>").to_string();
            for (idx, line) in text.lines().enumerate() {
                let line_no = idx + 1;
                let trimmed = line.trim_end_matches('\r');
                if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = trimmed.split('\t').collect();
                if fields.len() != 3 {
                    return Err(KgError::Parse {
                        file,
                        line: line_no,
                        message: format!("expected `id<TAB>kind<TAB>label`, found {} fields", fields.len()),
                    });
                }
                let kind = LabelKind::parse(fields[1].trim()).ok_or_else(|| KgError::Parse {
                    file: file.clone(),
                    line: line_no,
                    message: format!("unknown label kind `{}`", fields[1]),
                })?;
                g.add_label(fields[0].trim(), kind, fields[2])
                    .map_err(|message| KgError::Ingestion {
                        file: file.clone(),
                        line: line_no,
                        message,
                    })?;
                report.labels += 1;
            }
        }
        Ok((g, report))
    }

    pub fn objects_of(&self, head: &EntityId, r: &RelationId) -> &BTreeSet<EntityId> {
        // BTreeMap lookups on tuple keys need owned keys; clones are short strings.
        self.forward.get(&(head.clone(), r.clone())).unwrap_or(&EMPTY)
    }

    pub fn subjects_of(&self, r: &RelationId, tail: &EntityId) -> &BTreeSet<EntityId> {
        self.reverse.get(&(tail.clone(), r.clone())).unwrap_or(&EMPTY)
    }

    pub fn has_triple(&self, s: &EntityId, p: &RelationId, o: &EntityId) -> bool {
        self.objects_of(s, p).contains(o)
    }

    pub fn contains_entity(&self, e: &EntityId) -> bool {
        self.entities.contains_key(e)
    }

    pub fn contains_relation(&self, r: &RelationId) -> bool {
        self.relations.contains_key(r)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.keys()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationId> {
        self.relations.keys()
    }

    pub fn facts(&self) -> impl Iterator<Item = &Triple> {
        self.facts.iter()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    /// Canonical label of an entity; the id itself when unlabeled.
    pub fn entity_label<'a>(&'a self, e: &'a EntityId) -> &'a str {
        self.entities
            .get(e)
            .and_then(|l| l.first())
            .map(String::as_str)
            .unwrap_or(e.as_str())
    }

    pub fn relation_label<'a>(&'a self, r: &'a RelationId) -> &'a str {
        self.relations
            .get(r)
            .and_then(|l| l.first())
            .map(String::as_str)
            .unwrap_or(r.as_str())
    }

    pub fn entity_labels(&self, e: &EntityId) -> &[String] {
        self.entities.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every `(id, label)` row of the requested dictionary: the canonical
    /// label (the id when unlabeled) followed by each alias.
    pub fn all_labels(&self, kind: LabelKind) -> Vec<(String, String)> {
        fn rows<K: AsRef<str>>(map: &BTreeMap<K, Vec<String>>) -> Vec<(String, String)> {
            let mut out = Vec::new();
            for (id, labels) in map {
                let id = id.as_ref();
                if labels.is_empty() {
                    out.push((id.to_string(), id.to_string()));
                } else {
                    out.extend(labels.iter().map(|l| (id.to_string(), l.clone())));
                }
            }
            out
        }
        match kind {
            LabelKind::Entity => rows(&self.entities),
            LabelKind::Relation => rows(&self.relations),
        }
    }

    /// Reverse label lookup used when annotating answers; case-insensitive.
    pub fn find_entity_by_label(&self, label: &str) -> Option<&EntityId> {
        let wanted = label.trim().to_lowercase();
        self.entities.iter().find_map(|(id, labels)| {
            (labels.iter().any(|l| l.to_lowercase() == wanted) || id.as_str().to_lowercase() == wanted).then_some(id)
        })
    }

    /// Rebuilds both indexes from the fact set; used to check consistency.
    pub fn rebuilt_indexes(&self) -> (AdjacencyIndex, AdjacencyIndex) {
        let mut fwd: BTreeMap<_, BTreeSet<EntityId>> = BTreeMap::new();
        let mut rev: BTreeMap<_, BTreeSet<EntityId>> = BTreeMap::new();
        for t in &self.facts {
            fwd.entry((t.head.clone(), t.relation.clone()))
                .or_default()
                .insert(t.tail.clone());
            rev.entry((t.tail.clone(), t.relation.clone()))
                .or_default()
                .insert(t.head.clone());
        }
        (fwd, rev)
    }

    pub fn indexes_consistent(&self) -> bool {
        let (fwd, rev) = self.rebuilt_indexes();
        fwd == self.forward && rev == self.reverse
    }

    /// Serializes back to the triple and label file formats.
    pub fn to_files(&self) -> (String, String) {
        let mut triples = String::new();
        for t in &self.facts {
            triples.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
        }
        let mut labels = String::new();
        for (id, ls) in &self.entities {
            for l in ls {
                labels.push_str(&format!("{id}\tentity\t{l}\n"));
            }
        }
        for (id, ls) in &self.relations {
            for l in ls {
                labels.push_str(&format!("{id}\trelation\t{l}\n"));
            }
        }
        (triples, labels)
    }
}

impl AsRef<str> for EntityId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for RelationId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(triples: &str, labels: Option<&str>) -> KnowledgeGraph {
        KnowledgeGraph::load_str("t.tsv", triples, Some("l.tsv"), labels)
            .unwrap()
            .0
    }

    #[test]
    fn duplicate_lines_collapse() {
        let (g, report) = KnowledgeGraph::load_str("t", "e1\tr1\te2\ne1\tr1\te2\n", None, None).unwrap();
        assert_eq!(g.fact_count(), 1);
        assert_eq!(report.loaded, 1);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn empty_file() {
        let g = load("", None);
        assert_eq!(g.entity_count(), 0);
        assert_eq!(g.fact_count(), 0);
    }

    #[test]
    fn forward_index_by_hand() {
        let g = load("a\tp\tb\nb\tp\tc\na\tq\tc\n", None);
        let expected: BTreeSet<EntityId> = [EntityId::new("b")].into();
        assert_eq!(g.objects_of(&EntityId::new("a"), &RelationId::new("p")), &expected);
        assert!(g.indexes_consistent());
    }

    #[test]
    fn comments_are_skipped() {
        let (g, report) = KnowledgeGraph::load_str("t", "# header\na\tp\tb\n\n", None, None).unwrap();
        assert_eq!(g.fact_count(), 1);
        assert_eq!(report.skipped, 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KnowledgeGraph::load_str("t", "a\tp\tb\na\tp\n", None, None).unwrap_err();
        match err {
            KgError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_label_is_an_ingestion_error() {
        let err = KnowledgeGraph::load_str("t", "a\tp\tb\n", Some("l"), Some("zz\tentity\tZed\n")).unwrap_err();
        assert!(matches!(err, KgError::Ingestion { line: 1, .. }), "{err}");
        // kind mismatch is dangling as well
        let err = KnowledgeGraph::load_str("t", "a\tp\tb\n", Some("l"), Some("p\tentity\tZed\n")).unwrap_err();
        assert!(matches!(err, KgError::Ingestion { .. }));
    }

    #[test]
    fn namespaces_are_disjoint() {
        let err = KnowledgeGraph::load_str("t", "a\tp\tb\np\tq\tc\n", None, None).unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 2, .. }));
    }

    #[test]
    fn objects_of_two_tails_and_unknowns() {
        let g = load("a\tp\tb\na\tp\tc\nb\tq\tc\n", None);
        assert_eq!(g.objects_of(&EntityId::new("a"), &RelationId::new("p")).len(), 2);
        assert!(g.objects_of(&EntityId::new("zz"), &RelationId::new("p")).is_empty());
        assert!(g.objects_of(&EntityId::new("b"), &RelationId::new("p")).is_empty());
    }

    #[test]
    fn subjects_and_direction() {
        let g = load("a\tp\tb\n", None);
        let subj = g.subjects_of(&RelationId::new("p"), &EntityId::new("b"));
        assert_eq!(subj.iter().map(|e| e.as_str()).collect::<Vec<_>>(), vec!["a"]);
        assert!(g.subjects_of(&RelationId::new("nope"), &EntityId::new("b")).is_empty());
        assert!(g.has_triple(&EntityId::new("a"), &RelationId::new("p"), &EntityId::new("b")));
        assert!(!g.has_triple(&EntityId::new("b"), &RelationId::new("p"), &EntityId::new("a")));
    }

    #[test]
    fn label_rows_count_aliases() {
        let g = load(
            "a\tp\tb\n",
            Some("a\tentity\tAlpha\na\tentity\tThe A\nb\tentity\tBeta\n"),
        );
        assert_eq!(g.all_labels(LabelKind::Entity).len(), 3);
        assert!(KnowledgeGraph::new().all_labels(LabelKind::Relation).is_empty());
        // unlabeled relation falls back to its id
        assert_eq!(
            g.all_labels(LabelKind::Relation),
            vec![("p".to_string(), "p".to_string())]
        );
    }

    #[test]
    fn round_trip_through_files() {
        let g = load("a\tp\tb\nb\tp\tc\n", Some("a\tentity\tAlpha\np\trelation\tparent of\n"));
        let (t, l) = g.to_files();
        let again = load(&t, Some(&l));
        assert_eq!(g, again);
    }
}
