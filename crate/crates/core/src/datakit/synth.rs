//! Seeded synthetic corpus with the structure entity linking depends on.
//!
//! Titles are distinct combinations of a few words from one global pool of
//! name words, so every name word is shared by many entities and only the
//! full combination identifies one. Every entity also belongs to one type,
//! which owns a pool of context words (used around mentions) and descriptor
//! words (used in descriptions). Mentions are noisy aliases of their entity's
//! title surrounded by type-flavoured context.
//!
//! A share of entities is held back from training; validation and test
//! mentions draw their gold entity from that share with probability
//! `zero_shot_fraction`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::{DatasetSplit, EntityRecord, KnowledgeBase, Label, MentionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_train_mentions: usize,
    pub n_validation_mentions: usize,
    pub n_test_mentions: usize,
    pub n_types: usize,
    /// Per-title-word probability that a mention drops or swaps the word.
    pub alias_noise: f64,
    /// Share of validation/test mentions whose gold entity never appears in training.
    pub zero_shot_fraction: f64,
    /// Share of entities reserved for validation/test gold labels.
    pub unseen_entity_fraction: f64,
    /// Size of the global name-word pool titles are drawn from.
    pub name_words: usize,
    pub context_words_per_type: usize,
    pub descriptor_words_per_type: usize,
    pub filler_words: usize,
    pub title_words: usize,
    pub context_len: usize,
    pub description_len: usize,
    /// Probability that a context or description slot holds a type word rather than filler.
    pub type_word_rate: f64,
    /// Number of distinct `group` keys assigned to mentions.
    pub n_groups: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 1000,
            n_train_mentions: 5000,
            n_validation_mentions: 1000,
            n_test_mentions: 1000,
            n_types: 50,
            alias_noise: 0.2,
            zero_shot_fraction: 1.0,
            unseen_entity_fraction: 0.3,
            name_words: 48,
            context_words_per_type: 12,
            descriptor_words_per_type: 8,
            filler_words: 40,
            title_words: 3,
            context_len: 6,
            description_len: 8,
            type_word_rate: 0.5,
            n_groups: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_entities < 2 {
            return err(format!("n_entities must be at least 2, got {}", self.n_entities));
        }
        if self.n_types == 0 || self.n_types > self.n_entities {
            return err(format!("n_types must be in 1..={}, got {}", self.n_entities, self.n_types));
        }
        for (name, v) in [
            ("alias_noise", self.alias_noise),
            ("zero_shot_fraction", self.zero_shot_fraction),
            ("unseen_entity_fraction", self.unseen_entity_fraction),
            ("type_word_rate", self.type_word_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.title_words == 0 || self.title_words > self.name_words {
            return err(format!("title_words must be in 1..={}, got {}", self.name_words, self.title_words));
        }
        if self.context_words_per_type == 0 || self.descriptor_words_per_type == 0 || self.filler_words == 0 {
            return err("word pools must be non-empty".into());
        }
        if self.n_groups == 0 {
            return err("n_groups must be at least 1".into());
        }
        let unseen = self.unseen_count();
        if self.zero_shot_fraction > 0.0 && unseen == 0 {
            return err("zero-shot mentions requested but no entities are held out".into());
        }
        if self.n_train_mentions > 0 && unseen == self.n_entities {
            return err("every entity is held out, leaving none for training".into());
        }
        if n_choose_k(self.name_words, self.title_words) < self.n_entities as f64 {
            return err(format!(
                "{} name words cannot give {} distinct {}-word titles",
                self.name_words, self.n_entities, self.title_words
            ));
        }
        Ok(())
    }

    fn unseen_count(&self) -> usize {
        (self.unseen_entity_fraction * self.n_entities as f64).round() as usize
    }
}

fn n_choose_k(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Distinct pronounceable word for every index.
fn pseudo_word(mut n: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut word = String::new();
    for _ in 0..2 {
        let s = n % base;
        word.push_str(ONSETS[s / VOWELS.len()]);
        word.push_str(VOWELS[s % VOWELS.len()]);
        n /= base;
    }
    while n > 0 {
        let s = n % base;
        word.push_str(ONSETS[s / VOWELS.len()]);
        word.push_str(VOWELS[s % VOWELS.len()]);
        n /= base;
    }
    word
}

struct TypeLexicon {
    name: String,
    context: Vec<String>,
    descriptors: Vec<String>,
}

struct Lexicon {
    names: Vec<String>,
    types: Vec<TypeLexicon>,
    fillers: Vec<String>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| -> Vec<String> {
            let words = (next..next + n).map(pseudo_word).collect();
            next += n;
            words
        };
        let fillers = take(cfg.filler_words);
        let names = take(cfg.name_words);
        let types = (0..cfg.n_types)
            .map(|t| TypeLexicon {
                name: format!("type{t:03}"),
                context: take(cfg.context_words_per_type),
                descriptors: take(cfg.descriptor_words_per_type),
            })
            .collect();
        Self { names, types, fillers }
    }

    fn flavoured<R: Rng>(&self, pool: &[String], n: usize, rate: f64, rng: &mut R) -> String {
        (0..n)
            .map(|_| {
                if rng.random_bool(rate) {
                    pool.choose(rng).expect("non-empty pool").as_str()
                } else {
                    self.fillers.choose(rng).expect("non-empty fillers").as_str()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::new(cfg);

    let mut entity_types = Vec::with_capacity(cfg.n_entities);
    let mut entities = Vec::with_capacity(cfg.n_entities);
    let mut titles = HashSet::new();
    for i in 0..cfg.n_entities {
        let t = i % cfg.n_types;
        let ty = &lex.types[t];
        let title = loop {
            let words: Vec<&str> = lex
                .names
                .choose_multiple(&mut rng, cfg.title_words)
                .map(String::as_str)
                .collect();
            let mut key = words.clone();
            key.sort_unstable();
            if titles.insert(key.join(" ")) {
                break words.join(" ");
            }
        };
        let description = format!(
            "{} {}",
            title,
            lex.flavoured(&ty.descriptors, cfg.description_len, cfg.type_word_rate, &mut rng)
        );
        entity_types.push(t);
        entities.push(EntityRecord {
            entity_id: format!("E{i:05}"),
            title,
            types: vec![ty.name.clone()],
            description,
        });
    }

    let mut order: Vec<usize> = (0..cfg.n_entities).collect();
    order.shuffle(&mut rng);
    let (unseen, seen) = order.split_at(cfg.unseen_count());

    let mut counter = 0usize;
    let mut make_mentions = |n: usize, zero_shot: f64, rng: &mut ChaCha8Rng| -> Vec<MentionRecord> {
        (0..n)
            .map(|_| {
                let pool = if !unseen.is_empty() && (seen.is_empty() || rng.random_bool(zero_shot)) {
                    unseen
                } else {
                    seen
                };
                let e = *pool.choose(rng).expect("non-empty entity pool");
                let ty = &lex.types[entity_types[e]];
                let surface = alias(&entities[e].title, &lex.names, cfg.alias_noise, rng);
                counter += 1;
                MentionRecord {
                    mention_id: format!("M{counter:06}"),
                    context_left: lex.flavoured(&ty.context, cfg.context_len, cfg.type_word_rate, rng),
                    mention: surface,
                    context_right: lex.flavoured(&ty.context, cfg.context_len, cfg.type_word_rate, rng),
                    label: Label::Entity(entities[e].entity_id.clone()),
                    group: Some(format!("g{}", entity_types[e] % cfg.n_groups)),
                }
            })
            .collect()
    };
    let train = make_mentions(cfg.n_train_mentions, 0.0, &mut rng);
    let validation = make_mentions(cfg.n_validation_mentions, cfg.zero_shot_fraction, &mut rng);
    let test = make_mentions(cfg.n_test_mentions, cfg.zero_shot_fraction, &mut rng);

    Ok(DatasetSplit { train, validation, test, kb: KnowledgeBase::new(entities)? })
}

/// Drops or swaps title words with probability `noise` each, never
/// returning an empty surface.
fn alias<R: Rng>(title: &str, names: &[String], noise: f64, rng: &mut R) -> String {
    let words: Vec<&str> = title.split(' ').collect();
    if noise == 0.0 {
        return title.to_string();
    }
    let mut out: Vec<&str> = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        if !rng.random_bool(noise) {
            out.push(w);
            continue;
        }
        let remaining = words.len() - i - 1;
        if rng.random_bool(0.5) && out.len() + remaining > 0 {
            continue;
        }
        out.push(names.choose(rng).expect("non-empty names"));
    }
    out.join(" ")
}
