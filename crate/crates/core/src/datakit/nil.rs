use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetSplit, KnowledgeBase, Label, MentionRecord};
use crate::error::{Error, Result};

/// Removes every entity carrying one of `holdout_types` from the KB and
/// relabels the mentions that pointed at them as NIL. Mentions stay in their
/// original split, so NIL proportions follow the source split.
pub fn make_nil_split(d: &DatasetSplit, holdout_types: &[String]) -> Result<DatasetSplit> {
    let known = d.kb.types();
    if let Some(missing) = holdout_types.iter().find(|t| !known.contains(*t)) {
        return Err(Error::InvalidArgument(format!("holdout type `{missing}` does not occur in the KB")));
    }
    let holdout: HashSet<&str> = holdout_types.iter().map(String::as_str).collect();
    let (removed, kept): (Vec<_>, Vec<_>) = d
        .kb
        .entities()
        .iter()
        .cloned()
        .partition(|e| e.types.iter().any(|t| holdout.contains(t.as_str())));
    if kept.is_empty() {
        return Err(Error::InvalidArgument("holdout types cover the entire KB".into()));
    }
    let removed: HashSet<String> = removed.into_iter().map(|e| e.entity_id).collect();
    let relabel = |ms: &[MentionRecord]| -> Vec<MentionRecord> {
        ms.iter()
            .cloned()
            .map(|mut m| {
                if m.label.entity().is_some_and(|id| removed.contains(id)) {
                    m.label = Label::Nil;
                }
                m
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: relabel(&d.train),
        validation: relabel(&d.validation),
        test: relabel(&d.test),
        kb: KnowledgeBase::new(kept)?,
    })
}

/// Picks `round(fraction · #types)` distinct KB types with a seeded draw,
/// returned in sorted order.
pub fn pick_holdout_types(kb: &KnowledgeBase, fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("holdout fraction must be in [0, 1), got {fraction}")));
    }
    let types: Vec<String> = kb.types().into_iter().collect();
    let n = (fraction * types.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = types.choose_multiple(&mut rng, n).cloned().collect();
    picked.sort();
    Ok(picked)
}
