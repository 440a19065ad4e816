//! Dataset records, the knowledge base, file IO, rendering templates,
//! synthetic corpus generation and NIL-holdout construction.
//!
//! Record files are JSON lines. Mentions:
//!
//! ```text
//! {"mention_id":"m1","context_left":"...","mention":"...","context_right":"...","label":"E12","group":"w0"}
//! ```
//!
//! Entities:
//!
//! ```text
//! {"entity_id":"E12","title":"...","types":["t1"],"description":"..."}
//! ```
//!
//! A mention without a KB entry carries the reserved label `"NIL"`.

mod nil;
mod render;
mod synth;
mod vocab;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nil::{make_nil_split, pick_holdout_types};
pub use render::{render_entity, render_kb, render_mention, RenderStyle};
pub use synth::{generate_synthetic, SynthConfig};
pub use vocab::*;

pub const NIL: &str = "NIL";

/// Gold label of a mention: a KB entity or NIL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Entity(String),
    Nil,
}

impl Label {
    pub fn entity(&self) -> Option<&str> {
        match self {
            Label::Entity(id) => Some(id),
            Label::Nil => None,
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Label::Nil)
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.entity().unwrap_or(NIL))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == NIL { Label::Nil } else { Label::Entity(s) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionRecord {
    pub mention_id: String,
    pub context_left: String,
    pub mention: String,
    pub context_right: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub entity_id: String,
    pub title: String,
    pub types: Vec<String>,
    pub description: String,
}

/// Entity dictionary, kept sorted by entity id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    entities: Vec<EntityRecord>,
    positions: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(mut entities: Vec<EntityRecord>) -> Result<Self> {
        entities.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        let mut positions = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            validate_entity(e)?;
            if positions.insert(e.entity_id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate entity id `{}`", e.entity_id)));
            }
        }
        Ok(Self { entities, positions })
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.position(id).map(|i| &self.entities[i])
    }

    pub fn ids(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.entity_id.clone()).collect()
    }

    /// Distinct entity types, sorted.
    pub fn types(&self) -> BTreeSet<String> {
        self.entities.iter().flat_map(|e| e.types.iter().cloned()).collect()
    }
}

fn validate_entity(e: &EntityRecord) -> Result<()> {
    if e.entity_id.is_empty() || e.entity_id == NIL {
        return Err(Error::InvalidArgument(format!("invalid entity id `{}`", e.entity_id)));
    }
    if e.title.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("entity `{}` has an empty title", e.entity_id)));
    }
    Ok(())
}

fn validate_mention(m: &MentionRecord, kb: &KnowledgeBase) -> Result<()> {
    if m.mention.trim().is_empty() {
        return Err(Error::InvalidArgument(format!("mention `{}` has empty text", m.mention_id)));
    }
    if let Label::Entity(id) = &m.label {
        if kb.position(id).is_none() {
            return Err(Error::UnknownEntity(id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<MentionRecord>,
    pub validation: Vec<MentionRecord>,
    pub test: Vec<MentionRecord>,
    pub kb: KnowledgeBase,
}

/// Share of gold entities in a split that also occur as gold in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeenStats {
    pub validation_seen_pct: f64,
    pub test_seen_pct: f64,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        for m in self.train.iter().chain(&self.validation).chain(&self.test) {
            validate_mention(m, &self.kb)?;
        }
        Ok(())
    }

    pub fn gold_entities(mentions: &[MentionRecord]) -> BTreeSet<&str> {
        mentions.iter().filter_map(|m| m.label.entity()).collect()
    }

    pub fn seen_stats(&self) -> SeenStats {
        let train = Self::gold_entities(&self.train);
        let pct = |ms: &[MentionRecord]| {
            let gold = Self::gold_entities(ms);
            if gold.is_empty() {
                return 0.0;
            }
            100.0 * gold.iter().filter(|g| train.contains(*g)).count() as f64 / gold.len() as f64
        };
        SeenStats { validation_seen_pct: pct(&self.validation), test_seen_pct: pct(&self.test) }
    }

    pub fn is_zero_shot(&self) -> bool {
        let train = Self::gold_entities(&self.train);
        Self::gold_entities(&self.test).is_disjoint(&train)
    }
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const ENTITIES_FILE: &str = "entities.jsonl";

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_entities(path: &Path) -> Result<KnowledgeBase> {
    let records: Vec<EntityRecord> = read_jsonl(path)?;
    KnowledgeBase::new(records)
}

/// Reads mentions and checks every label against `kb`.
pub fn load_mentions(path: &Path, kb: &KnowledgeBase) -> Result<Vec<MentionRecord>> {
    let records: Vec<MentionRecord> = read_jsonl(path)?;
    for (i, m) in records.iter().enumerate() {
        validate_mention(m, kb).map_err(|e| match e {
            Error::UnknownEntity(_) => e,
            other => Error::Schema { path: path.to_path_buf(), line: i + 1, message: other.to_string() },
        })?;
    }
    Ok(records)
}

pub fn write_mentions(path: &Path, mentions: &[MentionRecord]) -> Result<()> {
    write_jsonl(path, mentions)
}

pub fn write_entities(path: &Path, kb: &KnowledgeBase) -> Result<()> {
    write_jsonl(path, kb.entities())
}

/// Loads `train/validation/test/entities.jsonl` from `dir`. Missing mention
/// files are treated as empty splits.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let kb = load_entities(&dir.join(ENTITIES_FILE))?;
    let load = |name: &str| -> Result<Vec<MentionRecord>> {
        let path = dir.join(name);
        if path.exists() {
            load_mentions(&path, &kb)
        } else {
            Ok(Vec::new())
        }
    };
    Ok(DatasetSplit {
        train: load(TRAIN_FILE)?,
        validation: load(VALIDATION_FILE)?,
        test: load(TEST_FILE)?,
        kb,
    })
}

pub fn write_dataset(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_entities(&dir.join(ENTITIES_FILE), &split.kb)?;
    write_mentions(&dir.join(TRAIN_FILE), &split.train)?;
    write_mentions(&dir.join(VALIDATION_FILE), &split.validation)?;
    write_mentions(&dir.join(TEST_FILE), &split.test)?;
    Ok(())
}

/// Vocabulary over every entity field and every mention field of `split`.
pub fn build_vocabulary(split: &DatasetSplit) -> Vocabulary {
    let mut texts: Vec<&str> = Vec::new();
    for e in split.kb.entities() {
        texts.push(&e.title);
        texts.push(&e.description);
        texts.extend(e.types.iter().map(String::as_str));
    }
    for m in split.train.iter().chain(&split.validation).chain(&split.test) {
        texts.extend([m.context_left.as_str(), &m.mention, &m.context_right]);
    }
    Vocabulary::build(texts)
}
