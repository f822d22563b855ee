//! One training phase over one or more datasets.
//!
//! The schedule is a seeded shuffle of all per-dataset batches, so dataset
//! selection is proportional to size and one epoch visits every sample
//! exactly once. Validation runs before the first update, every `eval_every`
//! effective updates and once more at phase end; the best-validation
//! snapshot is what a phase returns. A phase stops early after
//! `early_stop_patience` consecutive evaluations without improvement.

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::backend::{ClassExample, ModelBackend, TokenId, TrainConfig};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::eval::{macro_f1, per_label_f1, ConfusionMatrix};
use crate::prompting::{apply_pattern, verbalizer_subwords, Pvp};
use crate::report::{LogRecord, RunLog};

/// One dataset's contribution to a phase: prompted training examples plus a
/// validation split scored with the dataset's own PVP.
#[derive(Debug, Clone)]
pub struct PhaseDataset {
    pub id: String,
    pub pvp: Pvp,
    pub labels: Vec<String>,
    pub label_subwords: Vec<Vec<TokenId>>,
    pub train: Vec<ClassExample>,
    pub valid: Vec<ClassExample>,
}

impl PhaseDataset {
    /// Build prompted examples for explicit train/valid sample lists.
    pub fn build<B: ModelBackend>(
        id: &str,
        pvp: &Pvp,
        labels: &[String],
        train: &[Sample],
        valid: &[Sample],
        backend: &B,
    ) -> Result<PhaseDataset> {
        let subword_map = verbalizer_subwords(&pvp.verbalizer, backend)?;
        let label_subwords: Vec<Vec<TokenId>> = labels
            .iter()
            .map(|l| subword_map.get(l).cloned().unwrap_or_default())
            .collect();
        if label_subwords.iter().any(Vec::is_empty) {
            return Err(Error::InvalidVerbalizer {
                pvp: pvp.id.clone(),
                message: format!("verbalizer does not cover all labels of dataset '{id}'"),
            });
        }
        let convert = |samples: &[Sample]| -> Result<Vec<ClassExample>> {
            samples
                .iter()
                .map(|s| {
                    let gold = labels.iter().position(|l| l == &s.label).ok_or_else(|| {
                        Error::InvalidDataset {
                            dataset: id.to_string(),
                            message: format!("sample label '{}' not in label list", s.label),
                        }
                    })?;
                    let prompted = apply_pattern(&s.text, &pvp.pattern, backend.mask_token())?;
                    Ok(ClassExample {
                        prompted: prompted.text,
                        label_subwords: label_subwords.clone(),
                        gold,
                    })
                })
                .collect()
        };
        let train = convert(train)?;
        let valid = convert(valid)?;
        Ok(PhaseDataset {
            id: id.to_string(),
            pvp: pvp.clone(),
            labels: labels.to_vec(),
            label_subwords,
            train,
            valid,
        })
    }
}

/// A point where validation ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub at_update: u64,
    pub macro_f1: f64,
    pub improved: bool,
    /// True for the baseline evaluation before any update.
    pub initial: bool,
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome<S> {
    pub best: S,
    pub best_f1: f64,
    pub evaluations: Vec<EvalPoint>,
    /// Scheduled batches per dataset over the last epoch.
    pub schedule_counts: IndexMap<String, usize>,
    pub micro_steps: u64,
    pub updates: u64,
    pub stopped_early: bool,
}

/// Predict the label index for a prompted example; exact ties resolve to the
/// earlier declared label.
pub fn predict_index<B: ModelBackend>(
    backend: &B,
    prompted: &str,
    label_subwords: &[Vec<TokenId>],
) -> Result<usize> {
    let probs = backend.mask_distribution(prompted)?;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (i, ids) in label_subwords.iter().enumerate() {
        let score: f64 = ids.iter().map(|&id| probs[id]).sum::<f64>() / ids.len() as f64;
        total += score;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    if total <= 0.0 {
        return Err(Error::DegenerateScores);
    }
    Ok(best)
}

/// Macro-F1 of one dataset's validation split under the current model.
fn dataset_macro_f1<B: ModelBackend>(backend: &B, ds: &PhaseDataset) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(ds.labels.iter().cloned());
    for ex in &ds.valid {
        let pred = predict_index(backend, &ex.prompted, &ds.label_subwords)?;
        cm.record_index(ex.gold, pred);
    }
    macro_f1(&per_label_f1(&cm))
}

/// Aggregate validation score: the mean of the per-dataset validation
/// macro-F1 over every dataset that has validation samples.
pub fn aggregate_validation<B: ModelBackend>(
    backend: &B,
    datasets: &[PhaseDataset],
) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for ds in datasets {
        if !ds.valid.is_empty() {
            scores.push(dataset_macro_f1(backend, ds)?);
        }
    }
    if scores.is_empty() {
        return Ok(None);
    }
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

fn derive_seed(base: u64, salt: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(salt.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Chunk each dataset's (shuffled) train examples into batches and shuffle
/// the pooled batches. Selection frequency is proportional to dataset size
/// and every sample is visited exactly once per epoch.
fn build_schedule(
    datasets: &[PhaseDataset],
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<(usize, Vec<usize>)> {
    let mut pool = Vec::new();
    for (ds_idx, ds) in datasets.iter().enumerate() {
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            pool.push((ds_idx, chunk.to_vec()));
        }
    }
    pool.shuffle(rng);
    pool
}

pub struct PhaseSpec<'a> {
    pub name: &'a str,
    pub seed: u64,
    /// Cap on epochs; None trains until early stopping fires.
    pub max_epochs: Option<u32>,
}

/// Run one training phase and leave the backend restored to the best
/// snapshot found.
pub fn run_phase<B: ModelBackend>(
    backend: &mut B,
    datasets: &[PhaseDataset],
    spec: &PhaseSpec<'_>,
    config: &TrainConfig,
    log: &mut RunLog,
) -> Result<PhaseOutcome<B::Snapshot>> {
    config.validate()?;
    log.record(&LogRecord::PhaseStart {
        phase: spec.name,
        datasets: datasets.len(),
        seed: spec.seed,
    });
    backend.begin_phase(spec.seed);
    let mut schedule_rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, "schedule"));

    let mut best = backend.snapshot();
    let mut evaluations = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    // baseline evaluation before any update
    if let Some(initial) = aggregate_validation(backend, datasets)? {
        best_f1 = initial;
        evaluations.push(EvalPoint {
            at_update: 0,
            macro_f1: initial,
            improved: true,
            initial: true,
        });
        log.record(&LogRecord::Eval {
            phase: spec.name,
            update: 0,
            macro_f1: initial,
            improved: true,
        });
    } else {
        log.warn(&format!(
            "phase '{}': no validation samples; keeping the final model",
            spec.name
        ));
    }

    let mut schedule_counts: IndexMap<String, usize> =
        datasets.iter().map(|d| (d.id.clone(), 0)).collect();
    let mut micro_steps = 0u64;
    let mut no_improve = 0u32;
    let mut stopped_early = false;
    let mut last_eval_at = 0u64;
    let has_validation = best_f1.is_finite();

    let mut epoch = 0u32;
    let mut stalled_epochs = 0u32;
    'epochs: loop {
        if let Some(max) = spec.max_epochs {
            if epoch >= max {
                break;
            }
        }
        let updates_at_epoch_start = backend.effective_updates();
        let schedule = build_schedule(datasets, config.batch_size, &mut schedule_rng);
        if schedule.is_empty() {
            break;
        }
        if epoch == 0 {
            for (ds_idx, _) in &schedule {
                *schedule_counts
                    .get_mut(&datasets[*ds_idx].id)
                    .expect("dataset id") += 1;
            }
        }
        for (ds_idx, batch_indices) in schedule {
            let ds = &datasets[ds_idx];
            let batch: Vec<ClassExample> =
                batch_indices.iter().map(|&i| ds.train[i].clone()).collect();
            micro_steps += 1;
            let report = backend.train_step(&batch, config).map_err(|e| match e {
                Error::NonFiniteLoss { step, .. } => Error::NonFiniteLoss {
                    step,
                    dataset: ds.id.clone(),
                },
                other => other,
            })?;
            log.record(&LogRecord::Step {
                phase: spec.name,
                step: micro_steps,
                dataset: &ds.id,
                loss: report.loss,
            });
            if report.applied_update
                && has_validation
                && backend
                    .effective_updates()
                    .is_multiple_of(config.eval_every)
            {
                let update = backend.effective_updates();
                last_eval_at = update;
                let score = aggregate_validation(backend, datasets)?.expect("validation present");
                let improved = score > best_f1;
                if improved {
                    best_f1 = score;
                    best = backend.snapshot();
                    no_improve = 0;
                } else {
                    no_improve += 1;
                }
                evaluations.push(EvalPoint {
                    at_update: update,
                    macro_f1: score,
                    improved,
                    initial: false,
                });
                log.record(&LogRecord::Eval {
                    phase: spec.name,
                    update,
                    macro_f1: score,
                    improved,
                });
                if no_improve >= config.early_stop_patience {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
        epoch += 1;
        if spec.max_epochs.is_none() && !has_validation {
            // nothing to stop on; a single pass is all that is defined
            break;
        }
        // accumulation fills within grad_accumulation epochs at the latest;
        // a backend that never advances its update count would spin forever
        if backend.effective_updates() == updates_at_epoch_start {
            stalled_epochs += 1;
            if stalled_epochs > config.grad_accumulation as u32 + 1 {
                log.warn(&format!(
                    "phase '{}': no parameter updates in {stalled_epochs} epochs; stopping",
                    spec.name
                ));
                break;
            }
        } else {
            stalled_epochs = 0;
        }
    }

    if !stopped_early {
        backend.flush_pending(config)?;
        if has_validation && backend.effective_updates() > last_eval_at {
            let update = backend.effective_updates();
            let score = aggregate_validation(backend, datasets)?.expect("validation present");
            let improved = score > best_f1;
            if improved {
                best_f1 = score;
                best = backend.snapshot();
            }
            evaluations.push(EvalPoint {
                at_update: update,
                macro_f1: score,
                improved,
                initial: false,
            });
            log.record(&LogRecord::Eval {
                phase: spec.name,
                update,
                macro_f1: score,
                improved,
            });
        }
    }

    if !has_validation {
        // no validation anywhere: the final state stands in for "best"
        backend.flush_pending(config)?;
        best = backend.snapshot();
        best_f1 = f64::NAN;
    }

    let updates = backend.effective_updates();
    backend.restore(&best);
    log.record(&LogRecord::PhaseEnd {
        phase: spec.name,
        updates,
        best_macro_f1: best_f1,
        stopped_early,
    });
    Ok(PhaseOutcome {
        best,
        best_f1,
        evaluations,
        schedule_counts,
        micro_steps,
        updates,
        stopped_early,
    })
}

/// One pass of masked-language-model training over raw texts, scheduled the
/// same way as classification batches but at text granularity. No validation
/// metric is defined for this phase; the final state is returned.
pub fn run_mlm_epoch<B: ModelBackend>(
    backend: &mut B,
    texts_by_dataset: &[(String, Vec<String>)],
    seed: u64,
    config: &TrainConfig,
    log: &mut RunLog,
) -> Result<u64> {
    config.validate()?;
    log.record(&LogRecord::PhaseStart {
        phase: "mlm",
        datasets: texts_by_dataset.len(),
        seed,
    });
    backend.begin_phase(seed);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "mlm-schedule"));
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (ds_idx, (_, texts)) in texts_by_dataset.iter().enumerate() {
        let mut order: Vec<usize> = (0..texts.len()).collect();
        order.shuffle(&mut rng);
        pool.extend(order.into_iter().map(|i| (ds_idx, i)));
    }
    pool.shuffle(&mut rng);

    let mut steps = 0u64;
    for (ds_idx, text_idx) in pool {
        let (id, texts) = &texts_by_dataset[ds_idx];
        steps += 1;
        let report = backend
            .mlm_step(&texts[text_idx], config)
            .map_err(|e| match e {
                Error::NonFiniteLoss { step, .. } => Error::NonFiniteLoss {
                    step,
                    dataset: id.clone(),
                },
                other => other,
            })?;
        log.record(&LogRecord::Step {
            phase: "mlm",
            step: steps,
            dataset: id,
            loss: report.loss,
        });
    }
    backend.flush_pending(config)?;
    log.record(&LogRecord::PhaseEnd {
        phase: "mlm",
        updates: backend.effective_updates(),
        best_macro_f1: f64::NAN,
        stopped_early: false,
    });
    Ok(steps)
}
