//! Whitespace + suffix-piece tokenizer over a fixed vocabulary.
//!
//! Words are matched greedily against the unit list: the longest unit that
//! prefixes the remaining characters wins; continuation pieces carry a `##`
//! marker ("dominance" -> [domina, ##nce] when "dominance" itself is not a
//! unit). Unmatchable words collapse to a single unknown token.

use serde::{Deserialize, Serialize};

use crate::backend::TokenId;
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordVocab {
    units: Vec<String>,
}

impl SubwordVocab {
    /// Build from an iterator of units. Units starting with `##` match word
    /// continuations; everything else matches at word start. Special tokens
    /// are always present at fixed positions; duplicates are dropped and the
    /// rest is sorted so ids are stable regardless of input order.
    pub fn from_units<I, S>(units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: std::collections::BTreeSet<String> = units
            .into_iter()
            .map(Into::into)
            .filter(|u| !u.is_empty())
            .collect();
        set.remove(MASK_TOKEN);
        set.remove(UNK_TOKEN);
        let mut all = vec![MASK_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(set);
        SubwordVocab { units: all }
    }

    /// Whole-word vocabulary over every whitespace token of the given texts,
    /// lowercased.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        SubwordVocab::from_units(
            texts
                .into_iter()
                .flat_map(|t| t.split_whitespace())
                .map(|w| w.to_lowercase()),
        )
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mask_id(&self) -> TokenId {
        0
    }

    pub fn unk_id(&self) -> TokenId {
        1
    }

    pub fn unit(&self, id: TokenId) -> &str {
        &self.units[id]
    }

    pub fn id_of(&self, unit: &str) -> Option<TokenId> {
        self.units.iter().position(|u| u == unit)
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for u in &self.units {
            h.update(u.as_bytes());
            h.update([0]);
        }
        h.finalize()
            .iter()
            .take(12)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Greedy longest-match tokenization of one word (case-folded). A word
    /// with no full decomposition becomes `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<TokenId> {
        if word == MASK_TOKEN {
            return vec![self.mask_id()];
        }
        let word = word.to_lowercase();
        let mut ids = Vec::new();
        let mut rest = word.as_str();
        let mut first = true;
        while !rest.is_empty() {
            let mut matched = None;
            // longest unit that prefixes the remainder, with the right marker
            for (id, unit) in self.units.iter().enumerate() {
                let piece = if first {
                    if unit.starts_with(CONTINUATION) {
                        continue;
                    }
                    unit.as_str()
                } else {
                    match unit.strip_prefix(CONTINUATION) {
                        Some(p) if !p.is_empty() => p,
                        _ => continue,
                    }
                };
                if rest.starts_with(piece) {
                    match matched {
                        Some((_, len)) if len >= piece.len() => {}
                        _ => matched = Some((id, piece.len())),
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    rest = &rest[len..];
                    first = false;
                }
                None => return vec![self.unk_id()],
            }
        }
        if ids.is_empty() {
            vec![self.unk_id()]
        } else {
            ids
        }
    }

    /// Tokenize a whitespace-separated text. Unknown words map to `[UNK]`.
    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .flat_map(|w| self.encode_word(w))
            .collect()
    }

    /// Strict word tokenization for verbalizer words: unknown pieces error.
    pub fn encode_word_strict(&self, word: &str) -> Result<Vec<TokenId>> {
        let ids = self.encode_word(word);
        if ids.contains(&self.unk_id()) {
            return Err(Error::UnknownVerbalizerToken {
                label: String::new(),
                word: word.to_string(),
            });
        }
        Ok(ids)
    }
}
