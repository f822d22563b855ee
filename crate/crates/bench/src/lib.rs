//! Shared fixtures for the criterion benchmarks.

use mdl_core::backend::{ReferenceBackend, SubwordVocab};
use mdl_core::synthetic::keywords_for;

/// A vocabulary and backend sized like the synthetic training fixtures.
pub fn bench_backend(dim: usize) -> ReferenceBackend {
    let mut units: Vec<String> = [
        "the", "a", "it", "they", "said", "post", "today", "people", "again", "really", "online",
        "thread", "comment", "saw", "some", "just", "was", "targeted", "at", "alphaw", "betaw",
        "gammaw", "neutral",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for word in ["alphaw", "betaw", "gammaw"] {
        units.extend(keywords_for(word, 8));
    }
    ReferenceBackend::new(SubwordVocab::from_units(units), dim, 7)
}

/// A prompted sentence in the fixture style.
pub fn bench_prompt() -> String {
    "the post today alphasig3 really online It was [MASK]".to_string()
}
