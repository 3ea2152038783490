//! In-memory multi-relational graph store.
//!
//! Triples are interned into dense [`EntityId`] / [`RelationId`] vocabularies
//! and indexed by `(head, relation)` for forward lookups and by `tail` for the
//! backward walks used when sampling queries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e#{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Bidirectional label <-> dense id map. Ids are handed out in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for label in labels {
            vocab.intern(&label.into());
        }
        vocab
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// JSON object mapping label to id, keys sorted.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, u32> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        serde_json::to_value(map).expect("string map serializes")
    }

    /// Rebuilds a vocabulary from a label -> id JSON object. Ids must be contiguous.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let map: HashMap<String, u32> =
            serde_json::from_value(value.clone()).map_err(|e| Error::Format(format!("vocabulary: {e}")))?;
        let mut labels = vec![None; map.len()];
        for (label, id) in map {
            let slot = labels
                .get_mut(id as usize)
                .ok_or_else(|| Error::Format(format!("vocabulary id {id} is not contiguous")))?;
            if slot.is_some() {
                return Err(Error::Format(format!("vocabulary id {id} assigned twice")));
            }
            *slot = Some(label);
        }
        Ok(Self::from_labels(
            labels.into_iter().map(|l| l.expect("all slots filled")),
        ))
    }
}

/// Entity and relation vocabularies shared by every split of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub entities: Vocab,
    pub relations: Vocab,
}

impl Vocabularies {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).unwrap_or("<unknown>")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).unwrap_or("<unknown>")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "entities": self.entities.to_json(),
            "relations": self.relations.to_json(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let field = |name: &str| {
            value
                .get(name)
                .ok_or_else(|| Error::Format(format!("vocabulary file lacks `{name}`")))
        };
        Ok(Self {
            entities: Vocab::from_json(field("entities")?)?,
            relations: Vocab::from_json(field("relations")?)?,
        })
    }
}

/// Reads `head<TAB>relation<TAB>tail` lines, interning unseen labels.
pub fn load_triples(path: impl AsRef<Path>, vocab: &mut Vocabularies) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_triples(&text, vocab).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

/// Parses the triple file format from an in-memory string.
pub fn parse_triples(text: &str, vocab: &mut Vocabularies) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: String::new(),
                line: lineno + 1,
                message: format!("expected 3 non-empty tab-separated fields, found {}", fields.len()),
            });
        }
        let head = vocab.entities.intern(fields[0]);
        let relation = vocab.relations.intern(fields[1]);
        let tail = vocab.entities.intern(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

/// Writes triples in the loader's format using the supplied labels.
pub fn write_triples(path: impl AsRef<Path>, triples: &[Triple], vocab: &Vocabularies) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in triples {
        out.push_str(vocab.entity_label(t.head));
        out.push('\t');
        out.push_str(vocab.relation_label(t.relation));
        out.push('\t');
        out.push_str(vocab.entity_label(t.tail));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Immutable indexed graph over a fixed vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    // (head, relation) -> sorted, deduplicated tails
    forward: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    // tail -> sorted, deduplicated (head, relation) pairs
    backward: Vec<Vec<(EntityId, RelationId)>>,
    edge_count: usize,
}

impl KnowledgeGraph {
    /// Builds the index. Vocabulary sizes are taken as given so that all splits
    /// of one dataset agree on `|V|` and `|R|` even if a split never mentions
    /// some entity.
    pub fn build(triples: &[Triple], num_entities: usize, num_relations: usize) -> Result<Self> {
        let mut forward: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut backward = vec![Vec::new(); num_entities];
        for t in triples {
            if t.head.index() >= num_entities || t.tail.index() >= num_entities {
                return Err(Error::Input(format!(
                    "triple ({}, {}, {}) references an entity outside 0..{num_entities}",
                    t.head.0, t.relation.0, t.tail.0
                )));
            }
            if t.relation.index() >= num_relations {
                return Err(Error::Input(format!(
                    "triple ({}, {}, {}) references a relation outside 0..{num_relations}",
                    t.head.0, t.relation.0, t.tail.0
                )));
            }
            forward.entry((t.head, t.relation)).or_default().push(t.tail);
            backward[t.tail.index()].push((t.head, t.relation));
        }
        let mut edge_count = 0;
        for tails in forward.values_mut() {
            tails.sort_unstable();
            tails.dedup();
            edge_count += tails.len();
        }
        for incoming in &mut backward {
            incoming.sort_unstable();
            incoming.dedup();
        }
        Ok(Self {
            num_entities,
            num_relations,
            forward,
            backward,
            edge_count,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.num_entities {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "entity id {} out of range (|V| = {})",
                e.0, self.num_entities
            )))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.index() < self.num_relations {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "relation id {} out of range (|R| = {})",
                r.0, self.num_relations
            )))
        }
    }

    /// All `v` with `relation(head, v)`, sorted ascending.
    pub fn neighbors(&self, head: EntityId, relation: RelationId) -> Result<&[EntityId]> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        Ok(self.tails(head, relation))
    }

    /// Unchecked lookup; absent pairs give an empty slice.
    pub(crate) fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.forward.get(&(head, relation)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Incoming `(head, relation)` pairs of `tail`, sorted.
    pub fn incoming(&self, tail: EntityId) -> &[(EntityId, RelationId)] {
        self.backward.get(tail.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
    }

    /// Every distinct edge, sorted by (head, relation, tail).
    pub fn triples(&self) -> Vec<Triple> {
        let mut out: Vec<Triple> = self
            .forward
            .iter()
            .flat_map(|(&(head, relation), tails)| tails.iter().map(move |&tail| Triple { head, relation, tail }))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Nested train ⊆ valid ⊆ test graphs over one vocabulary.
#[derive(Debug, Clone)]
pub struct GraphSplits {
    pub vocab: Vocabularies,
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl GraphSplits {
    /// Builds the nested graphs from the edges each file contributes.
    pub fn from_triples(vocab: Vocabularies, train: &[Triple], valid: &[Triple], test: &[Triple]) -> Result<Self> {
        let (ne, nr) = (vocab.entities.len(), vocab.relations.len());
        let mut acc = train.to_vec();
        let train_g = KnowledgeGraph::build(&acc, ne, nr)?;
        acc.extend_from_slice(valid);
        let valid_g = KnowledgeGraph::build(&acc, ne, nr)?;
        acc.extend_from_slice(test);
        let test_g = KnowledgeGraph::build(&acc, ne, nr)?;
        Ok(Self {
            vocab,
            train: train_g,
            valid: valid_g,
            test: test_g,
        })
    }

    pub fn graph(&self, split: Split) -> &KnowledgeGraph {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// The graph whose answers count as "easy" for instances of `split`.
    pub fn smaller(&self, split: Split) -> &KnowledgeGraph {
        match split {
            Split::Train | Split::Valid => &self.train,
            Split::Test => &self.valid,
        }
    }
}

/// Loads the three edge files in train, valid, test order so that ids are
/// assigned by first appearance across that sequence.
pub fn build_splits(
    train_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<GraphSplits> {
    let mut vocab = Vocabularies::new();
    let train = load_triples(train_path, &mut vocab)?;
    let valid = load_triples(valid_path, &mut vocab)?;
    let test = load_triples(test_path, &mut vocab)?;
    GraphSplits::from_triples(vocab, &train, &valid, &test)
}
