//! Input templates.
//!
//! ```text
//! mention:             [CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP]
//! entity (zeshel):     [CLS] title [ENT] description [SEP]
//! entity (medmentions):[CLS] title [SEP] types [SEP] description [SEP]
//! ```

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, CLS_ID, ENT_ID, MENTION_END_ID, MENTION_START_ID, SEP_ID};
use super::{EntityRecord, KnowledgeBase, MentionRecord};
use crate::encoder::TokenSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderStyle {
    Zeshel,
    Medmentions,
}

/// Renders a mention with its context. The mention span is always kept whole;
/// context is trimmed from the far ends, as evenly as the two sides allow.
pub fn render_mention(m: &MentionRecord, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let left = vocab.encode(&m.context_left);
    let span = vocab.encode(&m.mention);
    let right = vocab.encode(&m.context_right);

    let fixed = span.len() + 4;
    if fixed > max_len {
        return Err(Error::SequenceTooLong { len: fixed, max: max_len });
    }
    let budget = max_len - fixed;
    let keep_left = left.len().min(budget / 2);
    let keep_right = right.len().min(budget - keep_left);
    let keep_left = left.len().min(budget - keep_right);

    let mut ids = Vec::with_capacity(fixed + keep_left + keep_right);
    ids.push(CLS_ID);
    ids.extend_from_slice(&left[left.len() - keep_left..]);
    ids.push(MENTION_START_ID);
    ids.extend_from_slice(&span);
    ids.push(MENTION_END_ID);
    ids.extend_from_slice(&right[..keep_right]);
    ids.push(SEP_ID);
    TokenSequence::new(ids)
}

/// Renders an entity. Only the description is ever truncated (from its tail).
pub fn render_entity(
    e: &EntityRecord,
    vocab: &Vocabulary,
    max_len: usize,
    style: RenderStyle,
) -> Result<TokenSequence> {
    let title = vocab.encode(&e.title);
    let description = vocab.encode(&e.description);
    let mut ids = vec![CLS_ID];
    ids.extend_from_slice(&title);
    match style {
        RenderStyle::Zeshel => ids.push(ENT_ID),
        RenderStyle::Medmentions => {
            ids.push(SEP_ID);
            ids.extend(vocab.encode(&e.types.join(" ")));
            ids.push(SEP_ID);
        }
    }
    let fixed = ids.len() + 1;
    if fixed > max_len {
        return Err(Error::SequenceTooLong { len: fixed, max: max_len });
    }
    let keep = description.len().min(max_len - fixed);
    ids.extend_from_slice(&description[..keep]);
    ids.push(SEP_ID);
    TokenSequence::new(ids)
}

/// Renders every KB entity, in KB (id) order.
pub fn render_kb(
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    max_len: usize,
    style: RenderStyle,
) -> Result<Vec<TokenSequence>> {
    kb.entities()
        .iter()
        .map(|e| {
            render_entity(e, vocab, max_len, style)
                .map_err(|err| Error::EntityEncoding { id: e.entity_id.clone(), source: Box::new(err) })
        })
        .collect()
}
