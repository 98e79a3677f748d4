use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_utf8;

/// Relation label marking pairs outside the inventory; never trained on.
pub const NO_RELATION: &str = "NO_RELATION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityLabel {
    Person,
    Location,
    Organization,
    Event,
    Product,
    Facility,
    Role,
    Norp,
    Title,
    Law,
    Language,
    WorkOfArt,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 12] = [
        EntityLabel::Person,
        EntityLabel::Location,
        EntityLabel::Organization,
        EntityLabel::Event,
        EntityLabel::Product,
        EntityLabel::Facility,
        EntityLabel::Role,
        EntityLabel::Norp,
        EntityLabel::Title,
        EntityLabel::Law,
        EntityLabel::Language,
        EntityLabel::WorkOfArt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Person => "PERSON",
            EntityLabel::Location => "LOCATION",
            EntityLabel::Organization => "ORGANIZATION",
            EntityLabel::Event => "EVENT",
            EntityLabel::Product => "PRODUCT",
            EntityLabel::Facility => "FACILITY",
            EntityLabel::Role => "ROLE",
            EntityLabel::Norp => "NORP",
            EntityLabel::Title => "TITLE",
            EntityLabel::Law => "LAW",
            EntityLabel::Language => "LANGUAGE",
            EntityLabel::WorkOfArt => "WORK_OF_ART",
        }
    }

    /// Position in [`EntityLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EntityLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown entity label {s:?}"))
    }
}

/// Character-span entity mention; offsets are Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub surface: String,
}

impl EntityMention {
    pub fn new(text: &str, start: usize, end: usize, label: EntityLabel) -> Self {
        EntityMention {
            start,
            end,
            label,
            surface: char_slice(text, start, end),
        }
    }

    pub fn key(&self) -> (usize, usize, EntityLabel) {
        (self.start, self.end, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub head: usize,
    pub tail: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub mentions: Vec<EntityMention>,
    #[serde(default)]
    pub relations: Vec<RelationInstance>,
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

impl AnnotatedDocument {
    /// Checks spans, surfaces, overlap and relation indices. Fills in missing
    /// surface strings.
    pub fn validate(&mut self) -> Result<()> {
        let len = self.text.chars().count();
        let err = |msg: String| Error::validation(self.doc_id.clone(), msg);
        for (i, m) in self.mentions.iter_mut().enumerate() {
            if !(m.start < m.end && m.end <= len) {
                return Err(err(format!(
                    "mention {i} span [{}, {}) outside text of {len} characters",
                    m.start, m.end
                )));
            }
            let surface = char_slice(&self.text, m.start, m.end);
            if m.surface.is_empty() {
                m.surface = surface;
            } else if m.surface != surface {
                return Err(err(format!(
                    "mention {i} surface {:?} does not match text {surface:?}",
                    m.surface
                )));
            }
        }
        let mut order: Vec<usize> = (0..self.mentions.len()).collect();
        order.sort_by_key(|&i| (self.mentions[i].start, self.mentions[i].end));
        for w in order.windows(2) {
            let (a, b) = (&self.mentions[w[0]], &self.mentions[w[1]]);
            if b.start < a.end {
                return Err(err(format!("mentions {} and {} overlap", w[0], w[1])));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            let n = self.mentions.len();
            if r.head >= n || r.tail >= n {
                return Err(err(format!(
                    "relation {i} references mention {} but the document has {n}",
                    r.head.max(r.tail)
                )));
            }
            if r.head == r.tail {
                return Err(err(format!("relation {i} links mention {} to itself", r.head)));
            }
            if r.label.is_empty() {
                return Err(err(format!("relation {i} has an empty label")));
            }
        }
        Ok(())
    }

    /// Relation labels other than `NO_RELATION`.
    pub fn relation_labels(&self) -> BTreeSet<&str> {
        self.relations
            .iter()
            .map(|r| r.label.as_str())
            .filter(|l| *l != NO_RELATION)
            .collect()
    }
}

/// Ordered relation-label inventory; label ids are line positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInventory {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationInventory {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l == NO_RELATION {
                return Err(Error::config(format!("invalid inventory label {l:?}")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate inventory label {l:?}")));
            }
        }
        if labels.is_empty() {
            return Err(Error::config("relation inventory is empty"));
        }
        Ok(RelationInventory { labels, index })
    }

    /// One label per line; blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}
