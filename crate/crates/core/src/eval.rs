//! Per-label F1, macro-F1, cross-seed aggregation and unseen-label flags.
//!
//! The confusion matrix is indexed by the dataset's declared label order
//! (rows = gold, columns = predicted). A label that is never gold and never
//! predicted gets F1 = 0 and still counts in the macro mean, so scores stay
//! comparable across methods.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::LoadedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// counts[gold][pred]
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::InvalidConfig {
                message: format!("label '{label}' not in confusion matrix"),
            })
    }

    pub fn record(&mut self, gold: &str, predicted: &str) -> Result<()> {
        let g = self.index_of(gold)?;
        let p = self.index_of(predicted)?;
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn record_index(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn from_pairs<'a, I>(labels: &[String], pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cm = ConfusionMatrix::new(labels.iter().cloned());
        for (gold, pred) in pairs {
            cm.record(gold, pred)?;
        }
        Ok(cm)
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold][predicted]
    }

    /// Total number of evaluated samples.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// F1 per label from the confusion matrix. Degenerate cells resolve to 0:
/// a label with no gold and no predicted occurrences scores 0.
pub fn per_label_f1(cm: &ConfusionMatrix) -> IndexMap<String, f64> {
    let n = cm.labels.len();
    let mut out = IndexMap::with_capacity(n);
    for i in 0..n {
        let tp = cm.counts[i][i] as f64;
        let pred_total: f64 = (0..n).map(|g| cm.counts[g][i] as f64).sum();
        let gold_total: f64 = (0..n).map(|p| cm.counts[i][p] as f64).sum();
        let precision = if pred_total > 0.0 {
            tp / pred_total
        } else {
            0.0
        };
        let recall = if gold_total > 0.0 {
            tp / gold_total
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.insert(cm.labels[i].clone(), f1);
    }
    out
}

/// Unweighted arithmetic mean of the per-label F1 values.
pub fn macro_f1(per_label: &IndexMap<String, f64>) -> Result<f64> {
    if per_label.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    Ok(per_label.values().sum::<f64>() / per_label.len() as f64)
}

/// Mean and population standard deviation over per-seed scores.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Target labels that appear in none of the given external datasets.
///
/// Two labels count as the same when their canonical names match or when
/// their verbalizers map them to the same surface word, which is how
/// differently named but identically defined labels are unified.
pub fn flag_unseen_labels(target: &LoadedDataset, externals: &[&LoadedDataset]) -> Vec<String> {
    target
        .spec
        .labels
        .iter()
        .filter(|label| {
            let word = target.pvp.verbalizer.word(label);
            !externals.iter().any(|ext| {
                ext.spec
                    .labels
                    .iter()
                    .any(|el| el == *label || ext.pvp.verbalizer.word(el) == word)
            })
        })
        .cloned()
        .collect()
}

/// Evaluation of one trained model on one test split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedEval {
    pub seed: u64,
    pub macro_f1: f64,
    pub per_label_f1: IndexMap<String, f64>,
}

/// Aggregated result for one (method, target, n) cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub target: String,
    pub n_shots: u32,
    pub seed_count: usize,
    pub macro_mean: f64,
    pub macro_std: f64,
    /// Per label: (mean, std) over seeds, in the dataset's declared order.
    pub per_label: IndexMap<String, (f64, f64)>,
    /// Target labels absent from all externals actually trained on.
    pub unseen_labels: Vec<String>,
    pub per_seed: Vec<SeedEval>,
}

impl EvalReport {
    pub fn from_seed_evals(
        method: &str,
        target: &str,
        n_shots: u32,
        labels: &[String],
        unseen_labels: Vec<String>,
        per_seed: Vec<SeedEval>,
    ) -> Result<Self> {
        let macros: Vec<f64> = per_seed.iter().map(|s| s.macro_f1).collect();
        let (macro_mean, macro_std) = aggregate_seeds(&macros)?;
        let mut per_label = IndexMap::with_capacity(labels.len());
        for label in labels {
            let vals: Vec<f64> = per_seed
                .iter()
                .map(|s| s.per_label_f1.get(label).copied().unwrap_or(0.0))
                .collect();
            per_label.insert(label.clone(), aggregate_seeds(&vals)?);
        }
        Ok(EvalReport {
            method: method.to_string(),
            target: target.to_string(),
            n_shots,
            seed_count: per_seed.len(),
            macro_mean,
            macro_std,
            per_label,
            unseen_labels,
            per_seed,
        })
    }

    /// Equality on everything except the method name. Used to check that
    /// degenerate method configurations collapse to the same numbers.
    pub fn same_results(&self, other: &EvalReport) -> bool {
        self.target == other.target
            && self.n_shots == other.n_shots
            && self.seed_count == other.seed_count
            && self.macro_mean == other.macro_mean
            && self.macro_std == other.macro_std
            && self.per_label == other.per_label
            && self
                .per_seed
                .iter()
                .zip(other.per_seed.iter())
                .all(|(a, b)| a == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha20Rng;

    /// Independent oracle: expand the matrix into (gold, pred) pairs and
    /// count tp/fp/fn per label by scanning the pair list.
    fn brute_force_f1(cm: &ConfusionMatrix) -> Vec<f64> {
        let n = cm.labels().len();
        let mut pairs = Vec::new();
        for g in 0..n {
            for p in 0..n {
                for _ in 0..cm.get(g, p) {
                    pairs.push((g, p));
                }
            }
        }
        (0..n)
            .map(|label| {
                let tp = pairs
                    .iter()
                    .filter(|(g, p)| *g == label && *p == label)
                    .count() as f64;
                let fp = pairs
                    .iter()
                    .filter(|(g, p)| *g != label && *p == label)
                    .count() as f64;
                let fnn = pairs
                    .iter()
                    .filter(|(g, p)| *g == label && *p != label)
                    .count() as f64;
                let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let rec = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
                if prec + rec > 0.0 {
                    2.0 * prec * rec / (prec + rec)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn matrix_from(labels: &[&str], rows: &[&[u64]]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(labels.iter().map(|s| s.to_string()));
        for (g, row) in rows.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    cm.record_index(g, p);
                }
            }
        }
        cm
    }

    #[test]
    fn diagonal_matrix_scores_one() {
        let cm = matrix_from(&["a", "b", "c"], &[&[5, 0, 0], &[0, 3, 0], &[0, 0, 7]]);
        for (_, f1) in per_label_f1(&cm) {
            assert_eq!(f1, 1.0);
        }
    }

    #[test]
    fn absent_label_scores_zero() {
        // "c" is never gold and never predicted.
        let cm = matrix_from(&["a", "b", "c"], &[&[2, 1, 0], &[0, 4, 0], &[0, 0, 0]]);
        let f1 = per_label_f1(&cm);
        assert_eq!(f1["c"], 0.0);
        // still counted in the macro mean
        let m = macro_f1(&f1).unwrap();
        assert!((m - (f1["a"] + f1["b"]) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_exhaustive_2x2() {
        // every 2x2 matrix with cell counts 0..4
        for a in 0..4u64 {
            for b in 0..4u64 {
                for c in 0..4u64 {
                    for d in 0..4u64 {
                        let cm = matrix_from(&["x", "y"], &[&[a, b], &[c, d]]);
                        let got: Vec<f64> = per_label_f1(&cm).values().copied().collect();
                        let want = brute_force_f1(&cm);
                        for (g, w) in got.iter().zip(want.iter()) {
                            assert!((g - w).abs() <= 1e-12, "{g} vs {w} on {a},{b},{c},{d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_5x5() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let labels = ["a", "b", "c", "d", "e"];
        for _ in 0..1000 {
            let mut cm = ConfusionMatrix::new(labels.iter().map(|s| s.to_string()));
            for g in 0..5 {
                for p in 0..5 {
                    let c = rng.gen_range(0..6u64);
                    for _ in 0..c {
                        cm.record_index(g, p);
                    }
                }
            }
            let got: Vec<f64> = per_label_f1(&cm).values().copied().collect();
            let want = brute_force_f1(&cm);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn macro_mean_hand_values() {
        let mut m = IndexMap::new();
        m.insert("a".to_string(), 0.62);
        m.insert("b".to_string(), 0.60);
        m.insert("c".to_string(), 0.02);
        let got = macro_f1(&m).unwrap();
        assert!((got - 1.24 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_single_label_is_identity() {
        let mut m = IndexMap::new();
        m.insert("only".to_string(), 0.37);
        assert_eq!(macro_f1(&m).unwrap(), 0.37);
        m.clear();
        assert!(matches!(macro_f1(&m), Err(Error::EmptyAggregate)));
    }

    #[test]
    fn seed_aggregation() {
        let (mean, std) = aggregate_seeds(&[0.5; 5]).unwrap();
        assert_eq!((mean, std), (0.5, 0.0));
        let (mean, std) = aggregate_seeds(&[0.4, 0.6]).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        assert!((std - 0.1).abs() < 1e-15);
        let (mean, std) = aggregate_seeds(&[0.8]).unwrap();
        assert_eq!((mean, std), (0.8, 0.0));
    }

    proptest! {
        #[test]
        fn macro_is_permutation_invariant(vals in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
            let mut m1 = IndexMap::new();
            let mut m2 = IndexMap::new();
            for (i, v) in vals.iter().enumerate() {
                m1.insert(format!("l{i}"), *v);
            }
            for (i, v) in vals.iter().enumerate().rev() {
                m2.insert(format!("l{i}"), *v);
            }
            let a = macro_f1(&m1).unwrap();
            let b = macro_f1(&m2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn aggregate_is_permutation_invariant(mut vals in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            let fwd = aggregate_seeds(&vals).unwrap();
            vals.reverse();
            let rev = aggregate_seeds(&vals).unwrap();
            prop_assert!((fwd.0 - rev.0).abs() < 1e-12);
            prop_assert!((fwd.1 - rev.1).abs() < 1e-12);
        }
    }
}
