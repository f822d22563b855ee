//! Orchestration of the two-step method, its baselines and ablations.
//!
//! Step 1 trains one shared model on the leakage-filtered external datasets,
//! each batch scored through its own PVP; step 2 specializes that model to a
//! target from a few shots per label. The baselines reuse the same phases:
//! few-shot adaptation straight from the initial model, masked-LM domain
//! adaptation before the shots, and single-phase joint training. Step-1
//! results are cached per external-configuration key so targets that share a
//! filtered set share one trained artifact.

mod cache;
mod phase;

pub use cache::{value_digest, ModelCache};
pub use phase::{
    aggregate_validation, predict_index, run_mlm_epoch, run_phase, EvalPoint, PhaseDataset,
    PhaseOutcome, PhaseSpec,
};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{ModelBackend, TrainConfig};
use crate::corpus::{leakage_filter, Corpus, LoadedDataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{
    flag_unseen_labels, macro_f1, per_label_f1, ConfusionMatrix, EvalReport, SeedEval,
};
use crate::prompting::{apply_pattern, verbalizer_subwords};
use crate::report::{sha256_hex, LogRecord, RunLog};
use crate::sampler::{sample_few_shot, sample_validation, FewShotPlan};

/// The compared systems: the two-step method, its three baselines, the
/// label-removal ablation and the related-dataset transfer setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Mdl,
    LmBase,
    Mlm,
    Mtl,
    MdlSpec,
    CrossJoint,
    #[serde(rename = "cross-3steps")]
    Cross3Steps,
    CrossSingle,
}

impl MethodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Mdl => "mdl",
            MethodKind::LmBase => "lm-base",
            MethodKind::Mlm => "mlm",
            MethodKind::Mtl => "mtl",
            MethodKind::MdlSpec => "mdl-spec",
            MethodKind::CrossJoint => "cross-joint",
            MethodKind::Cross3Steps => "cross-3steps",
            MethodKind::CrossSingle => "cross-single",
        }
    }

    pub fn needs_related(&self) -> bool {
        matches!(
            self,
            MethodKind::CrossJoint | MethodKind::Cross3Steps | MethodKind::CrossSingle
        )
    }

    pub fn all() -> [MethodKind; 8] {
        [
            MethodKind::Mdl,
            MethodKind::LmBase,
            MethodKind::Mlm,
            MethodKind::Mtl,
            MethodKind::MdlSpec,
            MethodKind::CrossJoint,
            MethodKind::Cross3Steps,
            MethodKind::CrossSingle,
        ]
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig {
                message: format!("unknown method '{s}'"),
            })
    }
}

/// Everything needed to produce one report cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub method: MethodKind,
    pub target: String,
    pub related: Option<String>,
    pub n_shots: u32,
    pub valid_size: u32,
    pub seeds_step2: Vec<u64>,
    pub seed_step1: u64,
    pub config: TrainConfig,
}

impl RunDescriptor {
    pub fn new(method: MethodKind, target: &str) -> Self {
        RunDescriptor {
            method,
            target: target.to_string(),
            related: None,
            n_shots: 4,
            valid_size: 16,
            seeds_step2: vec![1, 2, 3, 4, 5],
            seed_step1: 13,
            config: TrainConfig::default(),
        }
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        self.config.validate()?;
        let target = corpus.get(&self.target)?;
        if target.set.test.is_empty() || target.set.train.is_empty() {
            return Err(Error::InvalidDataset {
                dataset: self.target.clone(),
                message: "target needs non-empty train and test splits".into(),
            });
        }
        if self.method.needs_related() {
            match &self.related {
                Some(id) => {
                    corpus.get(id)?;
                }
                None => {
                    return Err(Error::MissingRelated {
                        method: self.method.as_str().into(),
                    })
                }
            }
        }
        if self.seeds_step2.is_empty() {
            return Err(Error::InvalidConfig {
                message: "at least one step-2 seed is required".into(),
            });
        }
        if self.method == MethodKind::Mtl && self.seeds_step2.len() != 1 {
            return Err(Error::SeedCount {
                method: "mtl".into(),
                got: self.seeds_step2.len(),
            });
        }
        if self.n_shots == 0 || self.valid_size == 0 {
            return Err(Error::InvalidConfig {
                message: "n_shots and valid_size must be positive".into(),
            });
        }
        Ok(())
    }
}

fn dataset_digest(ds: &LoadedDataset) -> String {
    let mut parts = String::new();
    parts.push_str(&ds.spec.id);
    parts.push('|');
    parts.push_str(&ds.content_digest);
    parts.push('|');
    parts.push_str(&ds.spec.labels.join(","));
    parts.push('|');
    parts.push_str(ds.pvp.pattern.template());
    parts.push('|');
    for w in ds.pvp.verbalizer.entries().values() {
        parts.push_str(w);
        parts.push(',');
    }
    sha256_hex(parts.as_bytes())[..24].to_string()
}

/// Runs experiments over one corpus with one backend, caching stage-1
/// artifacts across runs.
pub struct Trainer<'c, B: ModelBackend>
where
    B::Snapshot: Serialize + DeserializeOwned,
{
    corpus: &'c Corpus,
    backend: B,
    m0: B::Snapshot,
    m0_digest: String,
    cache: ModelCache<B::Snapshot>,
    audit_dir: Option<std::path::PathBuf>,
}

impl<'c, B: ModelBackend> Trainer<'c, B>
where
    B::Snapshot: Serialize + DeserializeOwned,
{
    pub fn new(corpus: &'c Corpus, backend: B, cache: ModelCache<B::Snapshot>) -> Self {
        let m0 = backend.snapshot();
        let m0_digest = value_digest(&m0);
        Trainer {
            corpus,
            backend,
            m0,
            m0_digest,
            cache,
            audit_dir: None,
        }
    }

    /// Export every drawn shot and validation set as delimited text under
    /// this directory.
    pub fn with_audit_dir(mut self, dir: std::path::PathBuf) -> Self {
        self.audit_dir = Some(dir);
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    pub fn cache(&self) -> &ModelCache<B::Snapshot> {
        &self.cache
    }

    fn phase_key(
        &self,
        kind: &str,
        base_digest: &str,
        config: &TrainConfig,
        seed: u64,
        datasets: &[&LoadedDataset],
    ) -> String {
        let mut parts = format!(
            "{kind}|{}|{base_digest}|{}|{seed}",
            self.backend.backend_id(),
            config.digest()
        );
        for ds in datasets {
            parts.push('|');
            parts.push_str(&dataset_digest(ds));
        }
        sha256_hex(parts.as_bytes())[..32].to_string()
    }

    fn build_phase_datasets(&self, datasets: &[&LoadedDataset]) -> Result<Vec<PhaseDataset>> {
        datasets
            .iter()
            .map(|d| {
                PhaseDataset::build(
                    &d.spec.id,
                    &d.pvp,
                    &d.spec.labels,
                    &d.set.train,
                    &d.set.valid,
                    &self.backend,
                )
            })
            .collect()
    }

    /// Supervised training phase over full datasets (step 1 and the
    /// related-dataset phases): single epoch cap, early stopping inside the
    /// epoch, best-validation snapshot, cached by input digests. An empty
    /// dataset list returns the base model unchanged with a warning.
    fn classify_phase(
        &mut self,
        name: &str,
        base: &B::Snapshot,
        datasets: &[&LoadedDataset],
        config: &TrainConfig,
        seed: u64,
        log: &mut RunLog,
    ) -> Result<B::Snapshot> {
        if datasets.is_empty() {
            log.warn(&format!(
                "phase '{name}': no datasets after filtering; model passes through unchanged"
            ));
            return Ok(base.clone());
        }
        let key = self.phase_key("classify", &value_digest(base), config, seed, datasets);
        if let Some(hit) = self.cache.get(&key) {
            log.note(&format!("phase '{name}': cache hit ({key})"));
            return Ok(hit);
        }
        self.backend.restore(base);
        let phase_data = self.build_phase_datasets(datasets)?;
        let spec = PhaseSpec {
            name,
            seed,
            max_epochs: Some(config.max_epochs_step1),
        };
        let outcome = run_phase(&mut self.backend, &phase_data, &spec, config, log)?;
        self.cache.put(&key, &outcome.best)?;
        Ok(outcome.best)
    }

    /// One epoch of masked-LM training over the external train texts
    /// (labels ignored), cached like a classify phase.
    fn mlm_phase(
        &mut self,
        base: &B::Snapshot,
        datasets: &[&LoadedDataset],
        config: &TrainConfig,
        seed: u64,
        log: &mut RunLog,
    ) -> Result<B::Snapshot> {
        if datasets.is_empty() {
            log.warn("phase 'mlm': no datasets after filtering; model passes through unchanged");
            return Ok(base.clone());
        }
        let key = self.phase_key("mlm", &value_digest(base), config, seed, datasets);
        if let Some(hit) = self.cache.get(&key) {
            log.note(&format!("phase 'mlm': cache hit ({key})"));
            return Ok(hit);
        }
        self.backend.restore(base);
        let texts: Vec<(String, Vec<String>)> = datasets
            .iter()
            .map(|d| {
                (
                    d.spec.id.clone(),
                    d.set.train.iter().map(|s| s.text.clone()).collect(),
                )
            })
            .collect();
        run_mlm_epoch(&mut self.backend, &texts, seed, config, log)?;
        let snap = self.backend.snapshot();
        self.cache.put(&key, &snap)?;
        Ok(snap)
    }

    /// Step 2: specialize from `base` on the sampled shots, early stopping
    /// on the sampled validation set, best snapshot returned.
    #[allow(clippy::too_many_arguments)]
    fn adapt_phase(
        &mut self,
        base: &B::Snapshot,
        target: &LoadedDataset,
        shots: &[Sample],
        valid: &[Sample],
        config: &TrainConfig,
        seed: u64,
        log: &mut RunLog,
    ) -> Result<B::Snapshot> {
        self.backend.restore(base);
        let data = PhaseDataset::build(
            &target.spec.id,
            &target.pvp,
            &target.spec.labels,
            shots,
            valid,
            &self.backend,
        )?;
        let spec = PhaseSpec {
            name: "adapt",
            seed,
            max_epochs: None,
        };
        let outcome = run_phase(&mut self.backend, &[data], &spec, config, log)?;
        Ok(outcome.best)
    }

    fn eval_on_test(
        &mut self,
        model: &B::Snapshot,
        target: &LoadedDataset,
        seed: u64,
    ) -> Result<SeedEval> {
        self.backend.restore(model);
        let subword_map = verbalizer_subwords(&target.pvp.verbalizer, &self.backend)?;
        let label_subwords: Vec<Vec<usize>> = target
            .spec
            .labels
            .iter()
            .map(|l| subword_map[l].clone())
            .collect();
        let mut cm = ConfusionMatrix::new(target.spec.labels.iter().cloned());
        for sample in &target.set.test {
            let prompted =
                apply_pattern(&sample.text, &target.pvp.pattern, self.backend.mask_token())?;
            let pred = predict_index(&self.backend, &prompted.text, &label_subwords)?;
            let gold = target
                .spec
                .labels
                .iter()
                .position(|l| l == &sample.label)
                .expect("loader guarantees declared labels");
            cm.record_index(gold, pred);
        }
        let per_label = per_label_f1(&cm);
        let macro_score = macro_f1(&per_label)?;
        Ok(SeedEval {
            seed,
            macro_f1: macro_score,
            per_label_f1: per_label,
        })
    }

    /// Apply each external dataset's declared external-only label removal,
    /// dropping datasets that end up empty.
    fn apply_removals(datasets: &[&LoadedDataset], log: &mut RunLog) -> Vec<LoadedDataset> {
        let mut out = Vec::new();
        for d in datasets {
            match d.without_labels(&d.spec.external_only_labels) {
                Some(kept) => out.push(kept),
                None => log.warn(&format!(
                    "dataset '{}': all labels removed by specialization; dropped",
                    d.spec.id
                )),
            }
        }
        out
    }

    /// Run one experiment cell: stage 1 per method (cached), then per-seed
    /// shot sampling, adaptation and test evaluation, aggregated over seeds.
    pub fn run(&mut self, desc: &RunDescriptor, log: &mut RunLog) -> Result<EvalReport> {
        desc.validate(self.corpus)?;
        let target = self.corpus.get(&desc.target)?.clone();
        let externals_all = self.corpus.externals();
        let filtered = leakage_filter(&externals_all, &target.spec);
        let config = &desc.config.clone();
        let m0 = self.m0.clone();

        // owned storage for method-modified external sets
        let mut modified: Vec<LoadedDataset> = Vec::new();
        let related: Option<LoadedDataset> = match &desc.related {
            Some(id) => Some(self.corpus.get(id)?.clone()),
            None => None,
        };

        let stage1: Option<B::Snapshot> = match desc.method {
            MethodKind::LmBase => Some(m0.clone()),
            MethodKind::Mdl => Some(self.classify_phase(
                "external",
                &m0,
                &filtered,
                config,
                desc.seed_step1,
                log,
            )?),
            MethodKind::MdlSpec => {
                modified = Self::apply_removals(&filtered, log);
                let refs: Vec<&LoadedDataset> = modified.iter().collect();
                Some(self.classify_phase("external", &m0, &refs, config, desc.seed_step1, log)?)
            }
            MethodKind::Mlm => {
                Some(self.mlm_phase(&m0, &filtered, config, desc.seed_step1, log)?)
            }
            MethodKind::CrossJoint => {
                let rel = related.as_ref().expect("validated");
                let mut joint: Vec<&LoadedDataset> = filtered.clone();
                joint.push(rel);
                Some(self.classify_phase("external", &m0, &joint, config, desc.seed_step1, log)?)
            }
            MethodKind::Cross3Steps => {
                let rel = related.as_ref().expect("validated");
                let me =
                    self.classify_phase("external", &m0, &filtered, config, desc.seed_step1, log)?;
                Some(self.classify_phase("related", &me, &[rel], config, desc.seed_step1, log)?)
            }
            MethodKind::CrossSingle => {
                let rel = related.as_ref().expect("validated");
                Some(self.classify_phase("related", &m0, &[rel], config, desc.seed_step1, log)?)
            }
            MethodKind::Mtl => None,
        };

        let mut per_seed = Vec::with_capacity(desc.seeds_step2.len());
        for &seed in &desc.seeds_step2 {
            let plan = FewShotPlan {
                n_per_label: desc.n_shots,
                valid_size: desc.valid_size,
                seed,
            };
            let shots = sample_few_shot(&target.spec.labels, &target.set.train, &plan)?;
            for w in &shots.warnings {
                log.warn(w);
            }
            let valid = sample_validation(
                &target.spec.labels,
                &target.set.train,
                &shots.indices,
                &plan,
            )?;
            for w in &valid.warnings {
                log.warn(w);
            }
            if let Some(dir) = &self.audit_dir {
                let stem = format!(
                    "{}-{}-n{}-seed{}",
                    crate::report::safe_file_stem(&target.spec.id),
                    desc.method.as_str(),
                    desc.n_shots,
                    seed
                );
                shots.export(&dir.join(format!("{stem}-shots.csv")))?;
                valid.export(&dir.join(format!("{stem}-valid.csv")))?;
            }

            let model = match (&stage1, desc.method) {
                (None, MethodKind::Mtl) => {
                    // single joint phase: the target's shots join the
                    // step-1 scheduler as one more dataset, combined
                    // validation over externals plus the target sample
                    self.backend.restore(&m0);
                    let mut phase_data = self.build_phase_datasets(&filtered)?;
                    phase_data.push(PhaseDataset::build(
                        &target.spec.id,
                        &target.pvp,
                        &target.spec.labels,
                        &shots.samples,
                        &valid.samples,
                        &self.backend,
                    )?);
                    let spec = PhaseSpec {
                        name: "mtl",
                        seed: desc.seed_step1,
                        max_epochs: Some(config.max_epochs_step1),
                    };
                    let outcome = run_phase(&mut self.backend, &phase_data, &spec, config, log)?;
                    outcome.best
                }
                (Some(base), _) => self.adapt_phase(
                    base,
                    &target,
                    &shots.samples,
                    &valid.samples,
                    config,
                    seed,
                    log,
                )?,
                (None, _) => unreachable!("stage1 is None only for mtl"),
            };
            per_seed.push(self.eval_on_test(&model, &target, seed)?);
        }

        // unseen labels are judged against the externals actually trained on
        let used: Vec<&LoadedDataset> = match desc.method {
            MethodKind::LmBase => Vec::new(),
            MethodKind::MdlSpec => modified.iter().collect(),
            MethodKind::CrossSingle => vec![related.as_ref().expect("validated")],
            MethodKind::CrossJoint | MethodKind::Cross3Steps => {
                let mut v = filtered.clone();
                v.push(related.as_ref().expect("validated"));
                v
            }
            _ => filtered.clone(),
        };
        let unseen = flag_unseen_labels(&target, &used);

        let report = EvalReport::from_seed_evals(
            desc.method.as_str(),
            &target.spec.id,
            desc.n_shots,
            &target.spec.labels,
            unseen,
            per_seed,
        )?;
        log.record(&LogRecord::Report {
            method: desc.method.as_str(),
            target: &report.target,
            n: report.n_shots,
            macro_mean: report.macro_mean,
            macro_std: report.macro_std,
        });
        Ok(report)
    }

    /// Train (or load) every cacheable stage-1 artifact the given runs will
    /// need. Returns (trained, cache_hits).
    pub fn warm_external_cache(
        &mut self,
        descriptors: &[RunDescriptor],
        log: &mut RunLog,
    ) -> Result<(usize, usize)> {
        let mut trained = 0;
        let mut hits = 0;
        let m0 = self.m0.clone();
        for desc in descriptors {
            desc.validate(self.corpus)?;
            let target = self.corpus.get(&desc.target)?;
            let externals_all = self.corpus.externals();
            let filtered = leakage_filter(&externals_all, &target.spec);
            let config = &desc.config;
            let before = self.cache.misses;
            match desc.method {
                MethodKind::Mdl | MethodKind::Cross3Steps => {
                    self.classify_phase("external", &m0, &filtered, config, desc.seed_step1, log)?;
                }
                MethodKind::MdlSpec => {
                    let modified = Self::apply_removals(&filtered, log);
                    let refs: Vec<&LoadedDataset> = modified.iter().collect();
                    self.classify_phase("external", &m0, &refs, config, desc.seed_step1, log)?;
                }
                MethodKind::Mlm => {
                    self.mlm_phase(&m0, &filtered, config, desc.seed_step1, log)?;
                }
                MethodKind::CrossJoint => {
                    let rel = self
                        .corpus
                        .get(desc.related.as_ref().expect("validated"))?
                        .clone();
                    let mut joint = filtered.clone();
                    joint.push(&rel);
                    self.classify_phase("external", &m0, &joint, config, desc.seed_step1, log)?;
                }
                MethodKind::CrossSingle => {
                    let rel = self
                        .corpus
                        .get(desc.related.as_ref().expect("validated"))?
                        .clone();
                    self.classify_phase("related", &m0, &[&rel], config, desc.seed_step1, log)?;
                }
                MethodKind::LmBase | MethodKind::Mtl => continue,
            }
            if self.cache.misses > before {
                trained += 1;
            } else {
                hits += 1;
            }
        }
        Ok((trained, hits))
    }

    pub fn m0_digest(&self) -> &str {
        &self.m0_digest
    }
}
