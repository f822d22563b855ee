//! Patterns, verbalizers and mask-position scoring.
//!
//! A pattern turns a raw text into a masked prompt ("X" -> "X It was
//! [MASK]"). The verbalizer maps each label to one surface word; a label's
//! score is the arithmetic mean of the mask-position probabilities of that
//! word's subword tokens, renormalized over the label set.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::{ModelBackend, TokenId};
use crate::error::{Error, Result};

pub const TEXT_SLOT: &str = "{text}";
pub const MASK_SLOT: &str = "{mask}";

/// A prompt template with exactly one `{text}` and one `{mask}` slot.
/// The text slot comes first so the original input is preserved as a prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern {
    template: String,
}

impl Pattern {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let check = |slot: &str| template.matches(slot).count();
        if check(TEXT_SLOT) != 1 || check(MASK_SLOT) != 1 {
            return Err(Error::InvalidPattern {
                pvp: String::new(),
                message: format!(
                    "template must contain exactly one {TEXT_SLOT} and one {MASK_SLOT}: {template:?}"
                ),
            });
        }
        if !template.starts_with(TEXT_SLOT) {
            return Err(Error::InvalidPattern {
                pvp: String::new(),
                message: format!("nothing may precede {TEXT_SLOT}: {template:?}"),
            });
        }
        Ok(Pattern { template })
    }

    pub fn template(&self) -> &str {
        &self.template
    }
}

impl TryFrom<String> for Pattern {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Pattern::new(s)
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.template
    }
}

/// Label -> surface word map. Words are single whitespace-free tokens and
/// the map is injective: two labels of one dataset never share a word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Verbalizer {
    entries: IndexMap<String, String>,
}

impl Verbalizer {
    pub fn new(entries: IndexMap<String, String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (label, word) in &entries {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVerbalizer {
                    pvp: String::new(),
                    message: format!(
                        "word {word:?} for label '{label}' must be one whitespace-free word"
                    ),
                });
            }
            if !seen.insert(word.clone()) {
                return Err(Error::InvalidVerbalizer {
                    pvp: String::new(),
                    message: format!("surface word '{word}' is used by more than one label"),
                });
            }
        }
        Ok(Verbalizer { entries })
    }

    pub fn word(&self, label: &str) -> &str {
        self.entries
            .get(label)
            .map(String::as_str)
            .unwrap_or_default()
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn entries(&self) -> &IndexMap<String, String> {
        &self.entries
    }

    /// Must cover the dataset's declared label list exactly.
    pub fn check_covers(&self, labels: &[String], pvp_id: &str) -> Result<()> {
        if self.entries.len() != labels.len()
            || labels.iter().any(|l| !self.entries.contains_key(l))
        {
            return Err(Error::InvalidVerbalizer {
                pvp: pvp_id.to_string(),
                message: format!(
                    "verbalizer labels {:?} do not match dataset labels {labels:?}",
                    self.entries.keys().collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }

    /// Restrict to a label subset, preserving order. Used when external-only
    /// labels are dropped from a dataset.
    pub fn restricted_to(&self, labels: &[String]) -> Verbalizer {
        Verbalizer {
            entries: self
                .entries
                .iter()
                .filter(|(l, _)| labels.contains(l))
                .map(|(l, w)| (l.clone(), w.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pvp {
    pub id: String,
    pub pattern: Pattern,
    pub verbalizer: Verbalizer,
}

/// A prompt produced by [`apply_pattern`]: the final string plus the byte
/// offset of the mask token within it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompted {
    pub text: String,
    pub mask_offset: usize,
}

/// Substitute the slots of the template. Substitution is positional on the
/// template, so a literal "{mask}" inside the user text is left untouched.
pub fn apply_pattern(text: &str, pattern: &Pattern, mask_token: &str) -> Result<Prompted> {
    if text.trim().is_empty() {
        return Err(Error::EmptyPromptText);
    }
    let template = pattern.template();
    // TEXT_SLOT is validated to be the template prefix.
    let after_text = &template[TEXT_SLOT.len()..];
    let mask_in_suffix = after_text.find(MASK_SLOT).expect("validated pattern");
    let mut out = String::with_capacity(text.len() + after_text.len() + mask_token.len());
    out.push_str(text);
    out.push_str(&after_text[..mask_in_suffix]);
    let mask_offset = out.len();
    out.push_str(mask_token);
    out.push_str(&after_text[mask_in_suffix + MASK_SLOT.len()..]);
    Ok(Prompted {
        text: out,
        mask_offset,
    })
}

/// Tokenize every verbalizer word. Fails if a word contains a subword the
/// backend does not know, naming the label and word.
pub fn verbalizer_subwords<B: ModelBackend + ?Sized>(
    verbalizer: &Verbalizer,
    backend: &B,
) -> Result<IndexMap<String, Vec<TokenId>>> {
    let mut out = IndexMap::with_capacity(verbalizer.entries().len());
    for (label, word) in verbalizer.entries() {
        let ids = backend
            .tokenize(word)
            .map_err(|_| Error::UnknownVerbalizerToken {
                label: label.clone(),
                word: word.clone(),
            })?;
        debug_assert!(!ids.is_empty());
        out.insert(label.clone(), ids);
    }
    Ok(out)
}

/// Raw and renormalized label scores at the mask position.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores {
    pub scores: IndexMap<String, f64>,
    pub normalized: IndexMap<String, f64>,
}

impl LabelScores {
    /// Highest-scoring label; exact ties go to the earlier declared label.
    pub fn argmax(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (label, &score) in &self.normalized {
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((label, score)),
            }
        }
        best.map(|(l, _)| l).expect("non-empty scores")
    }
}

/// Score each label as the mean mask probability of its subword ids, then
/// renormalize over the label set.
pub fn score_labels(
    mask_probs: &[f64],
    subwords: &IndexMap<String, Vec<TokenId>>,
) -> Result<LabelScores> {
    let mut scores = IndexMap::with_capacity(subwords.len());
    for (label, ids) in subwords {
        let sum: f64 = ids.iter().map(|&id| mask_probs[id]).sum();
        scores.insert(label.clone(), sum / ids.len() as f64);
    }
    let total: f64 = scores.values().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateScores);
    }
    let normalized = scores.iter().map(|(l, s)| (l.clone(), s / total)).collect();
    Ok(LabelScores { scores, normalized })
}

/// Full inference path: prompt, query the backend at the mask position,
/// score the verbalizer and return the argmax label.
pub fn predict<B: ModelBackend + ?Sized>(
    text: &str,
    pvp: &Pvp,
    subwords: &IndexMap<String, Vec<TokenId>>,
    backend: &B,
) -> Result<String> {
    let prompted = apply_pattern(text, &pvp.pattern, backend.mask_token())?;
    let probs = backend.mask_distribution(&prompted.text)?;
    let scores = score_labels(&probs, subwords)?;
    Ok(scores.argmax().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(entries: &[(&str, &str)]) -> IndexMap<String, String> {
        entries
            .iter()
            .map(|(l, w)| (l.to_string(), w.to_string()))
            .collect()
    }

    fn subword_map(entries: &[(&str, &[usize])]) -> IndexMap<String, Vec<TokenId>> {
        entries
            .iter()
            .map(|(l, ids)| (l.to_string(), ids.to_vec()))
            .collect()
    }

    #[test]
    fn default_pattern_appends_mask_clause() {
        let p = Pattern::new("{text} It was {mask}").unwrap();
        let got = apply_pattern("I'll kill you.", &p, "[MASK]").unwrap();
        assert_eq!(got.text, "I'll kill you. It was [MASK]");
        assert!(got.text.starts_with("I'll kill you."));
        assert_eq!(&got.text[got.mask_offset..got.mask_offset + 6], "[MASK]");
    }

    #[test]
    fn target_pattern() {
        let p = Pattern::new("{text} It was targeted at {mask}").unwrap();
        let got = apply_pattern("X", &p, "[MASK]").unwrap();
        assert_eq!(got.text, "X It was targeted at [MASK]");
    }

    #[test]
    fn literal_mask_in_text_is_preserved() {
        let p = Pattern::new("{text} It was {mask}").unwrap();
        let got = apply_pattern("weird {mask} inside", &p, "[MASK]").unwrap();
        assert_eq!(got.text, "weird {mask} inside It was [MASK]");
    }

    #[test]
    fn empty_text_rejected() {
        let p = Pattern::new("{text} It was {mask}").unwrap();
        assert!(matches!(
            apply_pattern("   ", &p, "[MASK]"),
            Err(Error::EmptyPromptText)
        ));
    }

    #[test]
    fn pattern_validation() {
        assert!(Pattern::new("{text} It was {mask}").is_ok());
        assert!(Pattern::new("say {text} {mask}").is_err()); // text not first
        assert!(Pattern::new("{text} {mask} {mask}").is_err());
        assert!(Pattern::new("{text} only").is_err());
        assert!(Pattern::new("{mask} only").is_err());
    }

    #[test]
    fn verbalizer_rejects_aliased_words() {
        assert!(Verbalizer::new(map(&[("a", "same"), ("b", "same")])).is_err());
        assert!(Verbalizer::new(map(&[("a", "two words")])).is_err());
        assert!(Verbalizer::new(map(&[("a", "x"), ("b", "y")])).is_ok());
    }

    #[test]
    fn subword_average_hand_arithmetic() {
        // label A -> probs {0.2, 0.4}, label B -> {0.3}: scores tie at 0.3.
        let probs = vec![0.2, 0.4, 0.3];
        let map = subword_map(&[("A", &[0, 1]), ("B", &[2])]);
        let scores = score_labels(&probs, &map).unwrap();
        assert!((scores.scores["A"] - 0.3).abs() < 1e-12);
        assert!((scores.scores["B"] - 0.3).abs() < 1e-12);
        let total: f64 = scores.normalized.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_label_normalizes_to_one() {
        let probs = vec![0.05, 0.2];
        let map = subword_map(&[("only", &[1])]);
        let scores = score_labels(&probs, &map).unwrap();
        assert_eq!(scores.normalized["only"], 1.0);
    }

    #[test]
    fn exact_tie_breaks_by_declared_order() {
        let probs = vec![0.25, 0.25];
        let map = subword_map(&[("first", &[0]), ("second", &[1])]);
        let scores = score_labels(&probs, &map).unwrap();
        assert_eq!(scores.argmax(), "first");
    }

    #[test]
    fn one_subword_per_label_is_direct_lookup() {
        let probs = vec![0.1, 0.6, 0.3];
        let map = subword_map(&[("a", &[0]), ("b", &[1]), ("c", &[2])]);
        let scores = score_labels(&probs, &map).unwrap();
        for (label, ids) in &map {
            assert_eq!(scores.scores[label], probs[ids[0]]);
        }
    }

    #[test]
    fn all_zero_scores_is_degenerate() {
        let probs = vec![0.0, 0.0, 1.0];
        let map = subword_map(&[("a", &[0]), ("b", &[1])]);
        assert!(matches!(
            score_labels(&probs, &map),
            Err(Error::DegenerateScores)
        ));
    }

    #[test]
    fn unknown_verbalizer_word_names_label_and_word() {
        use crate::backend::{ReferenceBackend, SubwordVocab};
        let backend = ReferenceBackend::new(SubwordVocab::from_units(["hate", "it", "was"]), 4, 1);
        let verbalizer = Verbalizer::new(map(&[("bad", "hate"), ("odd", "zyxxyz")])).unwrap();
        match verbalizer_subwords(&verbalizer, &backend) {
            Err(Error::UnknownVerbalizerToken { label, word }) => {
                assert_eq!(label, "odd");
                assert_eq!(word, "zyxxyz");
            }
            other => panic!("expected UnknownVerbalizerToken, got {other:?}"),
        }
    }

    proptest! {
        /// Positive scaling of the backend distribution never changes the
        /// argmax or the normalized scores.
        #[test]
        fn argmax_invariant_under_positive_scaling(
            probs in proptest::collection::vec(1e-6f64..1.0, 4),
            scale in 1e-3f64..1e3,
        ) {
            let map = subword_map(&[("a", &[0, 1]), ("b", &[2]), ("c", &[3])]);
            let base = score_labels(&probs, &map).unwrap();
            let scaled: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            let after = score_labels(&scaled, &map).unwrap();
            prop_assert_eq!(base.argmax(), after.argmax());
            for (l, v) in &base.normalized {
                prop_assert!((v - after.normalized[l]).abs() < 1e-9);
            }
        }

        /// Every label is reachable as a predict output for some distribution.
        #[test]
        fn every_label_reachable(winner in 0usize..3) {
            let map = subword_map(&[("a", &[0]), ("b", &[1]), ("c", &[2])]);
            let mut probs = vec![0.01, 0.01, 0.01];
            probs[winner] = 0.9;
            let scores = score_labels(&probs, &map).unwrap();
            let labels = ["a", "b", "c"];
            prop_assert_eq!(scores.argmax(), labels[winner]);
        }
    }
}
