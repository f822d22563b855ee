//! Few-shot and validation sampling for a target dataset.
//!
//! Shots are drawn per label, uniformly without replacement, as a
//! deterministic function of the seed. The validation set follows the label
//! distribution of the full original train split via largest-remainder
//! rounding and is disjoint from the shots by construction.

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotPlan {
    pub n_per_label: u32,
    pub valid_size: u32,
    pub seed: u64,
}

impl Default for FewShotPlan {
    fn default() -> Self {
        FewShotPlan {
            n_per_label: 4,
            valid_size: 16,
            seed: 0,
        }
    }
}

/// A drawn sample set plus indices into the original train split, so
/// disjointness can be audited.
#[derive(Debug, Clone)]
pub struct DrawnSet {
    pub samples: Vec<Sample>,
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DrawnSet {
    /// Emit the drawn samples as delimited text in the data-file format, so
    /// a run's exact shots are auditable and reloadable.
    pub fn export(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::InvalidConfig {
            message: format!("{}: {e}", path.display()),
        })?;
        writer
            .write_record(["text", "label"])
            .and_then(|_| {
                self.samples
                    .iter()
                    .try_for_each(|s| writer.write_record([s.text.as_str(), s.label.as_str()]))
            })
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| Error::InvalidConfig {
                message: format!("{}: {e}", path.display()),
            })
    }
}

fn label_pools(labels: &[String], train: &[Sample]) -> IndexMap<String, Vec<usize>> {
    let mut pools: IndexMap<String, Vec<usize>> =
        labels.iter().map(|l| (l.clone(), Vec::new())).collect();
    for (i, s) in train.iter().enumerate() {
        if let Some(pool) = pools.get_mut(&s.label) {
            pool.push(i);
        }
    }
    pools
}

/// Exactly min(n, available) shots per label. A label with zero training
/// samples is a hard error; a capped label records a warning.
pub fn sample_few_shot(
    labels: &[String],
    train: &[Sample],
    plan: &FewShotPlan,
) -> Result<DrawnSet> {
    if train.is_empty() {
        return Err(Error::EmptyLabelPool {
            label: labels.first().cloned().unwrap_or_default(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
    let mut out = DrawnSet {
        samples: Vec::new(),
        indices: Vec::new(),
        warnings: Vec::new(),
    };
    for (label, mut pool) in label_pools(labels, train) {
        if pool.is_empty() {
            return Err(Error::EmptyLabelPool { label });
        }
        let want = plan.n_per_label as usize;
        if pool.len() < want {
            out.warnings.push(format!(
                "label '{label}': only {} of {want} requested shots available",
                pool.len()
            ));
        }
        pool.shuffle(&mut rng);
        let take = want.min(pool.len());
        let mut chosen: Vec<usize> = pool[..take].to_vec();
        chosen.sort_unstable();
        for idx in chosen {
            out.samples.push(train[idx].clone());
            out.indices.push(idx);
        }
    }
    Ok(out)
}

/// Per-label quotas from largest-remainder rounding of
/// `valid_size * frequency in the full original train split`, drawn from the
/// pool left over after the few-shot draw. When a label's remaining pool
/// cannot fill its quota the deficit moves to the other labels, so the total
/// is `min(valid_size, pool size)`.
pub fn sample_validation(
    labels: &[String],
    train: &[Sample],
    few_shot_indices: &[usize],
    plan: &FewShotPlan,
) -> Result<DrawnSet> {
    let taken: std::collections::HashSet<usize> = few_shot_indices.iter().copied().collect();
    let full_pools = label_pools(labels, train);
    let remaining: IndexMap<String, Vec<usize>> = full_pools
        .iter()
        .map(|(l, pool)| {
            (
                l.clone(),
                pool.iter()
                    .copied()
                    .filter(|i| !taken.contains(i))
                    .collect(),
            )
        })
        .collect();
    let pool_size: usize = remaining.values().map(Vec::len).sum();

    let mut out = DrawnSet {
        samples: Vec::new(),
        indices: Vec::new(),
        warnings: Vec::new(),
    };
    let want_total = (plan.valid_size as usize).min(pool_size);
    if pool_size < plan.valid_size as usize {
        out.warnings.push(format!(
            "validation pool has {pool_size} samples, requested {}; taking the whole pool",
            plan.valid_size
        ));
    }
    if want_total == 0 {
        return Ok(out);
    }

    // largest-remainder quotas over the full original train distribution
    let total_train: f64 = full_pools.values().map(|p| p.len() as f64).sum();
    let exact: Vec<f64> = full_pools
        .values()
        .map(|p| plan.valid_size as f64 * p.len() as f64 / total_train)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = (plan.valid_size as usize).saturating_sub(quotas.iter().sum::<usize>());
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        quotas[i] += 1;
        leftover -= 1;
    }
    // cap at what remains per label and push any deficit to labels with room
    let caps: Vec<usize> = remaining.values().map(Vec::len).collect();
    let mut deficit = 0usize;
    for (q, &cap) in quotas.iter_mut().zip(&caps) {
        if *q > cap {
            deficit += *q - cap;
            *q = cap;
        }
    }
    while deficit > 0 {
        let before = deficit;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            if quotas[i] < caps[i] {
                quotas[i] += 1;
                deficit -= 1;
            }
        }
        if deficit == before {
            break; // pool exhausted
        }
    }
    // when the pool is smaller than valid_size, trim quotas down to the pool
    let mut excess = quotas.iter().sum::<usize>().saturating_sub(want_total);
    while excess > 0 {
        let before = excess;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if quotas[i] > 0 {
                quotas[i] -= 1;
                excess -= 1;
            }
        }
        if excess == before {
            break;
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed.wrapping_add(0x9e3779b97f4a7c15));
    for ((_, pool), quota) in remaining.iter().zip(quotas.iter()) {
        let mut pool = pool.clone();
        pool.shuffle(&mut rng);
        let mut chosen: Vec<usize> = pool.into_iter().take(*quota).collect();
        chosen.sort_unstable();
        for idx in chosen {
            out.samples.push(train[idx].clone());
            out.indices.push(idx);
        }
    }
    debug_assert_eq!(out.samples.len(), want_total);
    Ok(out)
}
