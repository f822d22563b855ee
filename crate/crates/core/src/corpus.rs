//! Dataset manifests, label canonicalization, splits and leakage filtering.
//!
//! A manifest is one TOML file declaring datasets (role, source group,
//! labels, data files) and the PVPs they reference. Data files are delimited
//! text (UTF-8, header row, columns `text,label`; tab-separated when the
//! extension is `.tsv`), with paths resolved relative to the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompting::{Pattern, Pvp, Verbalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Genre {
    Microblog,
    Forum,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    External,
    Target,
    Related,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    ExplicitFiles,
    Ratio8020,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OfficialSplits,
    Derived8020,
}

/// One corpus as declared in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub source_group: String,
    pub language: String,
    pub genre: Genre,
    pub role: Role,
    pub labels: Vec<String>,
    pub pvp_id: String,
    pub split_policy: SplitPolicy,
    /// Labels to drop from this dataset in the specialization ablation.
    pub external_only_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub label: String,
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

/// Alias -> canonical label pairs. Resolution is scoped: a raw label that is
/// already declared by the dataset stays as is, then the dataset-level map is
/// tried, then the manifest-level map. The result must land in the declared
/// label list, which makes canonicalization idempotent by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelCanonMap {
    entries: BTreeMap<String, String>,
}

impl LabelCanonMap {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        for (alias, canon) in &entries {
            if let Some(next) = entries.get(canon) {
                if next != canon {
                    return Err(Error::CanonNotIdempotent {
                        alias: alias.clone(),
                        canon: canon.clone(),
                    });
                }
            }
        }
        Ok(LabelCanonMap { entries })
    }

    /// Unifications that recur across the common shared-task families:
    /// the assorted negative-class spellings collapse to "normal", and a few
    /// equivalently defined labels get a directional default.
    pub fn default_unifications() -> Self {
        let pairs = [
            ("neutral", "normal"),
            ("none", "normal"),
            ("no-hate", "normal"),
            ("nohate", "normal"),
            ("not-offensive", "normal"),
            ("not_offensive", "normal"),
            ("non-misogynous", "normal"),
            ("not-sexist", "normal"),
            ("other", "normal"),
            ("hateful", "hate"),
            ("sexist", "misogyny"),
            ("individual", "active"),
        ];
        LabelCanonMap {
            entries: pairs
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
        }
    }

    pub fn get(&self, alias: &str) -> Option<&str> {
        self.entries.get(alias).map(String::as_str)
    }

    pub fn merged_over(&self, fallback: &LabelCanonMap) -> LabelCanonMap {
        let mut entries = fallback.entries.clone();
        entries.extend(self.entries.clone());
        LabelCanonMap { entries }
    }
}

fn canonicalize(
    raw: &str,
    declared: &[String],
    dataset_canon: &LabelCanonMap,
    global_canon: &LabelCanonMap,
) -> Option<String> {
    let contains = |l: &str| declared.iter().any(|d| d == l);
    if contains(raw) {
        return Some(raw.to_string());
    }
    for map in [dataset_canon, global_canon] {
        if let Some(c) = map.get(raw) {
            if contains(c) {
                return Some(c.to_string());
            }
        }
    }
    None
}

/// A dataset after loading: spec, resolved PVP, splits, content digest.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub pvp: Pvp,
    pub set: SampleSet,
    pub content_digest: String,
}

impl LoadedDataset {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Drop every sample carrying one of the given labels and shrink the
    /// label list and verbalizer accordingly. Returns None when nothing is
    /// left.
    pub fn without_labels(&self, removed: &[String]) -> Option<LoadedDataset> {
        if removed.is_empty() {
            return Some(self.clone());
        }
        let keep: Vec<String> = self
            .spec
            .labels
            .iter()
            .filter(|l| !removed.contains(l))
            .cloned()
            .collect();
        if keep.is_empty() {
            return None;
        }
        let filter = |samples: &[Sample]| -> Vec<Sample> {
            samples
                .iter()
                .filter(|s| keep.contains(&s.label))
                .cloned()
                .collect()
        };
        let train = filter(&self.set.train);
        if train.is_empty() {
            return None;
        }
        let mut spec = self.spec.clone();
        spec.labels = keep.clone();
        let pvp = Pvp {
            id: self.pvp.id.clone(),
            pattern: self.pvp.pattern.clone(),
            verbalizer: self.pvp.verbalizer.restricted_to(&keep),
        };
        Some(LoadedDataset {
            spec,
            pvp,
            set: SampleSet {
                train,
                valid: filter(&self.set.valid),
                test: filter(&self.set.test),
                provenance: self.set.provenance,
            },
            content_digest: self.content_digest.clone(),
        })
    }
}

/// Per-dataset sample counts plus any non-fatal observations from loading.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub counts: IndexMap<String, (usize, usize, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    datasets: IndexMap<String, LoadedDataset>,
    pub report: LoadReport,
}

impl Corpus {
    pub fn load(manifest_path: &Path, split_seed: u64) -> Result<Corpus> {
        let raw = std::fs::read_to_string(manifest_path).map_err(|e| Error::Io {
            path: manifest_path.to_path_buf(),
            source: e,
        })?;
        let manifest: ManifestFile = toml::from_str(&raw).map_err(|e| Error::ManifestParse {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        load_from_manifest(&manifest, base, split_seed)
    }

    pub fn from_datasets(datasets: Vec<LoadedDataset>) -> Result<Corpus> {
        let mut map = IndexMap::new();
        let mut report = LoadReport::default();
        for d in datasets {
            report.counts.insert(d.spec.id.clone(), d.set.counts());
            if map.insert(d.spec.id.clone(), d).is_some() {
                return Err(Error::DuplicateDatasetId {
                    id: report.counts.keys().last().unwrap().clone(),
                });
            }
        }
        Ok(Corpus {
            datasets: map,
            report,
        })
    }

    pub fn get(&self, id: &str) -> Result<&LoadedDataset> {
        self.datasets
            .get(id)
            .ok_or_else(|| Error::UnknownDatasetId { id: id.to_string() })
    }

    pub fn datasets(&self) -> impl Iterator<Item = &LoadedDataset> {
        self.datasets.values()
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn externals(&self) -> Vec<&LoadedDataset> {
        self.datasets
            .values()
            .filter(|d| d.spec.role == Role::External)
            .collect()
    }

    pub fn targets(&self) -> Vec<&LoadedDataset> {
        self.datasets
            .values()
            .filter(|d| d.spec.role == Role::Target)
            .collect()
    }

    /// Every text in the corpus; used to build desk-scale vocabularies.
    pub fn all_texts(&self) -> impl Iterator<Item = &str> {
        self.datasets.values().flat_map(|d| {
            d.set
                .train
                .iter()
                .chain(&d.set.valid)
                .chain(&d.set.test)
                .map(|s| s.text.as_str())
        })
    }

    pub fn pattern_texts(&self) -> impl Iterator<Item = &str> {
        self.datasets.values().map(|d| d.pvp.pattern.template())
    }

    pub fn verbalizer_words(&self) -> impl Iterator<Item = &str> {
        self.datasets
            .values()
            .flat_map(|d| d.pvp.verbalizer.entries().values().map(String::as_str))
    }
}

/// Externals whose source group differs from the target's, order preserved.
pub fn leakage_filter<'a>(
    externals: &[&'a LoadedDataset],
    target: &DatasetSpec,
) -> Vec<&'a LoadedDataset> {
    externals
        .iter()
        .filter(|e| e.spec.source_group != target.source_group)
        .copied()
        .collect()
}

/// The deduplicated set of filtered-external configurations over all
/// targets: step-1 training runs once per configuration.
pub fn distinct_external_configs(
    externals: &[&LoadedDataset],
    targets: &[&LoadedDataset],
) -> BTreeSet<Vec<String>> {
    targets
        .iter()
        .map(|t| {
            let mut ids: Vec<String> = leakage_filter(externals, &t.spec)
                .iter()
                .map(|d| d.spec.id.clone())
                .collect();
            ids.sort();
            ids
        })
        .collect()
}

/// 80/20 split with a further 80/20 train/valid split, all membership a
/// deterministic function of the seed. Explicit sets pass through unchanged.
pub fn make_splits(set: SampleSet, policy: SplitPolicy, seed: u64) -> Result<SampleSet> {
    match policy {
        SplitPolicy::ExplicitFiles => Ok(set),
        SplitPolicy::Ratio8020 => {
            let mut pool: Vec<Sample> = set.train;
            pool.extend(set.valid);
            pool.extend(set.test);
            if pool.len() < 5 {
                return Err(Error::TooFewSamples {
                    got: pool.len(),
                    min: 5,
                });
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            let test_len = pool.len() / 5;
            let train_len = pool.len() - test_len;
            let valid_len = train_len / 5;
            let mut test_idx: Vec<usize> = idx[..test_len].to_vec();
            let mut valid_idx: Vec<usize> = idx[test_len..test_len + valid_len].to_vec();
            let mut train_idx: Vec<usize> = idx[test_len + valid_len..].to_vec();
            // keep file order inside each split so output is stable to read
            test_idx.sort_unstable();
            valid_idx.sort_unstable();
            train_idx.sort_unstable();
            let pick = |ids: &[usize]| ids.iter().map(|&i| pool[i].clone()).collect();
            Ok(SampleSet {
                train: pick(&train_idx),
                valid: pick(&valid_idx),
                test: pick(&test_idx),
                provenance: Provenance::Derived8020,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// manifest format
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ManifestFile {
    #[serde(default)]
    dataset: Vec<DatasetEntry>,
    #[serde(default)]
    pvp: Vec<PvpEntry>,
    /// manifest-wide alias -> canonical label pairs
    #[serde(default)]
    canon: BTreeMap<String, String>,
    /// set to false to disable the built-in unification defaults
    #[serde(default = "default_true")]
    use_default_canon: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
struct DatasetEntry {
    id: String,
    source_group: String,
    language: String,
    #[serde(default = "default_genre")]
    genre: Genre,
    role: Role,
    labels: Vec<String>,
    pvp: String,
    split_policy: SplitPolicy,
    train: Option<PathBuf>,
    valid: Option<PathBuf>,
    test: Option<PathBuf>,
    /// single pool file for the ratio policy
    data: Option<PathBuf>,
    #[serde(default)]
    canon: BTreeMap<String, String>,
    #[serde(default)]
    external_only_labels: Vec<String>,
}

fn default_genre() -> Genre {
    Genre::Other
}

#[derive(Debug, Deserialize)]
struct PvpEntry {
    id: String,
    pattern: String,
    verbalizer: IndexMap<String, String>,
}

fn load_from_manifest(manifest: &ManifestFile, base: &Path, split_seed: u64) -> Result<Corpus> {
    let global_canon = {
        let declared = LabelCanonMap::new(manifest.canon.clone())?;
        if manifest.use_default_canon {
            declared.merged_over(&LabelCanonMap::default_unifications())
        } else {
            declared
        }
    };

    let mut pvps: IndexMap<String, Pvp> = IndexMap::new();
    for entry in &manifest.pvp {
        if pvps.contains_key(&entry.id) {
            return Err(Error::DuplicatePvpId {
                id: entry.id.clone(),
            });
        }
        let pattern = Pattern::new(entry.pattern.clone()).map_err(|e| Error::InvalidPattern {
            pvp: entry.id.clone(),
            message: e.to_string(),
        })?;
        let verbalizer =
            Verbalizer::new(entry.verbalizer.clone()).map_err(|e| Error::InvalidVerbalizer {
                pvp: entry.id.clone(),
                message: e.to_string(),
            })?;
        pvps.insert(
            entry.id.clone(),
            Pvp {
                id: entry.id.clone(),
                pattern,
                verbalizer,
            },
        );
    }

    let mut seen_ids = BTreeSet::new();
    let mut datasets = Vec::with_capacity(manifest.dataset.len());
    let mut report = LoadReport::default();
    for entry in &manifest.dataset {
        if !seen_ids.insert(entry.id.clone()) {
            return Err(Error::DuplicateDatasetId {
                id: entry.id.clone(),
            });
        }
        let unique: BTreeSet<&String> = entry.labels.iter().collect();
        if unique.len() != entry.labels.len() || entry.labels.is_empty() {
            return Err(Error::InvalidDataset {
                dataset: entry.id.clone(),
                message: "labels must be non-empty and unique".into(),
            });
        }
        let pvp = pvps
            .get(&entry.pvp)
            .ok_or_else(|| Error::UnknownPvp {
                dataset: entry.id.clone(),
                pvp: entry.pvp.clone(),
            })?
            .clone();
        pvp.verbalizer.check_covers(&entry.labels, &pvp.id)?;

        let dataset_canon = LabelCanonMap::new(entry.canon.clone())?;
        let mut digest = Sha256::new();
        let mut read = |path: &PathBuf| -> Result<Vec<Sample>> {
            read_samples(
                entry,
                &base.join(path),
                &dataset_canon,
                &global_canon,
                &mut digest,
            )
        };

        let (set, warn) = match entry.split_policy {
            SplitPolicy::ExplicitFiles => {
                let train_path = entry.train.as_ref().ok_or_else(|| Error::InvalidDataset {
                    dataset: entry.id.clone(),
                    message: "explicit_files requires a train file".into(),
                })?;
                let test_path = entry.test.as_ref().ok_or_else(|| Error::InvalidDataset {
                    dataset: entry.id.clone(),
                    message: "explicit_files requires a test file".into(),
                })?;
                let train = read(train_path)?;
                let test = read(test_path)?;
                match &entry.valid {
                    Some(valid_path) => {
                        let valid = read(valid_path)?;
                        (
                            SampleSet {
                                train,
                                valid,
                                test,
                                provenance: Provenance::OfficialSplits,
                            },
                            None,
                        )
                    }
                    None => {
                        // no official validation split: carve 20% off train
                        let carved = make_splits(
                            SampleSet {
                                train,
                                valid: vec![],
                                test: vec![],
                                provenance: Provenance::OfficialSplits,
                            },
                            SplitPolicy::Ratio8020,
                            split_seed,
                        )?;
                        // the ratio helper also carves a test part; fold it back
                        let mut train = carved.train;
                        train.extend(carved.test);
                        (
                            SampleSet {
                                train,
                                valid: carved.valid,
                                test,
                                provenance: Provenance::Derived8020,
                            },
                            Some(format!(
                                "dataset '{}': validation split derived 80/20 from train",
                                entry.id
                            )),
                        )
                    }
                }
            }
            SplitPolicy::Ratio8020 => {
                let data_path = entry.data.as_ref().ok_or_else(|| Error::InvalidDataset {
                    dataset: entry.id.clone(),
                    message: "ratio_80_20 requires a data file".into(),
                })?;
                let pool = read(data_path)?;
                let set = make_splits(
                    SampleSet {
                        train: pool,
                        valid: vec![],
                        test: vec![],
                        provenance: Provenance::Derived8020,
                    },
                    SplitPolicy::Ratio8020,
                    split_seed,
                )?;
                (set, None)
            }
        };
        if let Some(w) = warn {
            report.warnings.push(w);
        }

        report.counts.insert(entry.id.clone(), set.counts());
        datasets.push(LoadedDataset {
            spec: DatasetSpec {
                id: entry.id.clone(),
                source_group: entry.source_group.clone(),
                language: entry.language.clone(),
                genre: entry.genre,
                role: entry.role,
                labels: entry.labels.clone(),
                pvp_id: entry.pvp.clone(),
                split_policy: entry.split_policy,
                external_only_labels: entry.external_only_labels.clone(),
            },
            pvp,
            set,
            content_digest: digest
                .finalize_reset()
                .iter()
                .take(12)
                .map(|b| format!("{b:02x}"))
                .collect(),
        });
    }

    let mut corpus = Corpus::from_datasets(datasets)?;
    corpus.report.warnings = report.warnings;
    corpus.report.counts = report.counts;
    Ok(corpus)
}

fn read_samples(
    entry: &DatasetEntry,
    path: &Path,
    dataset_canon: &LabelCanonMap,
    global_canon: &LabelCanonMap,
    digest: &mut Sha256,
) -> Result<Vec<Sample>> {
    if !path.exists() {
        return Err(Error::MissingDataFile {
            dataset: entry.id.clone(),
            path: path.to_path_buf(),
        });
    }
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::DataParse {
            dataset: entry.id.clone(),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::DataParse {
            dataset: entry.id.clone(),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (text_col, label_col) = match (col("text"), col("label")) {
        (Some(t), Some(l)) => (t, l),
        _ => {
            return Err(Error::DataParse {
                dataset: entry.id.clone(),
                path: path.to_path_buf(),
                message: format!("header must contain text,label columns, got {headers:?}"),
            })
        }
    };

    let mut samples = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based, after header
        let record = record.map_err(|e| Error::DataParse {
            dataset: entry.id.clone(),
            path: path.to_path_buf(),
            message: format!("row {row}: {e}"),
        })?;
        let text = record.get(text_col).unwrap_or("").trim().to_string();
        if text.is_empty() {
            return Err(Error::EmptyText {
                dataset: entry.id.clone(),
                row,
            });
        }
        let raw_label = record.get(label_col).unwrap_or("").trim();
        let label = canonicalize(raw_label, &entry.labels, dataset_canon, global_canon)
            .ok_or_else(|| Error::UnknownLabel {
                dataset: entry.id.clone(),
                row,
                label: raw_label.to_string(),
            })?;
        digest.update(text.as_bytes());
        digest.update([0]);
        digest.update(label.as_bytes());
        digest.update([1]);
        samples.push(Sample {
            text,
            label,
            dataset_id: entry.id.clone(),
        });
    }
    Ok(samples)
}
