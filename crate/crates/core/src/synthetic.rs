//! Synthetic keyword-separable corpora for tests, benchmarks and demos.
//!
//! Every label owns a small set of signature keywords derived from its
//! verbalizer word; a sample is some shared filler words plus one or two
//! keywords of its label (labels with no keywords are plain filler text).
//! Because verbalizer words are shared across datasets, the same keyword
//! vocabulary recurs wherever two datasets agree on a word, which is exactly
//! the structure multi-dataset training exploits. Generation is a pure
//! function of the seed.
//!
//! [`shared_task_suite`] reproduces the shape of a real multilingual
//! evaluation: nine English external datasets and thirteen targets across
//! the AMI, HASOC, HatEval, LSA, MLMA, SRW, GermEval, OLID, Stormfront and
//! ToLD-Br families, with their label sets, verbalizers and source groups.

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::backend::TrainConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Hyperparameters that behave well for the reference backend on keyword
/// corpora of this size: a higher learning rate and a smaller accumulation
/// window than a full-scale encoder would use, so one external epoch
/// contains enough updates to learn the keyword structure.
pub fn desk_scale_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1.0,
        grad_accumulation: 4,
        eval_every: 20,
        early_stop_patience: 12,
        ..TrainConfig::default()
    }
}

pub const PATTERN_DEFAULT: &str = "{text} It was {mask}";
pub const PATTERN_TARGETED: &str = "{text} It was targeted at {mask}";

const FILLERS: [&str; 16] = [
    "the", "a", "it", "they", "said", "post", "today", "people", "again", "really", "online",
    "thread", "comment", "saw", "some", "just",
];

#[derive(Debug, Clone)]
pub struct LabelDef {
    pub label: String,
    pub word: String,
    /// Signature keywords for this label's verbalizer word; zero makes the
    /// label plain filler text (a catch-all negative class).
    pub keyword_count: usize,
    /// Draw keywords from another word's pool, so two differently named
    /// labels can describe the same kind of content.
    pub keyword_stem: Option<String>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl LabelDef {
    pub fn new(label: &str, word: &str) -> Self {
        LabelDef {
            label: label.to_string(),
            word: word.to_string(),
            keyword_count: 6,
            keyword_stem: None,
            train: 8,
            valid: 3,
            test: 3,
        }
    }

    pub fn keywords(mut self, count: usize) -> Self {
        self.keyword_count = count;
        self
    }

    pub fn keyword_stem(mut self, stem: &str) -> Self {
        self.keyword_stem = Some(stem.to_string());
        self
    }

    pub fn counts(mut self, train: usize, valid: usize, test: usize) -> Self {
        self.train = train;
        self.valid = valid;
        self.test = test;
        self
    }

    fn keyword_pool(&self) -> Vec<String> {
        keywords_for(
            self.keyword_stem.as_deref().unwrap_or(&self.word),
            self.keyword_count,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub id: String,
    pub source_group: String,
    pub language: String,
    pub genre: &'static str,
    pub role: &'static str,
    pub pattern: &'static str,
    pub labels: Vec<LabelDef>,
    pub external_only: Vec<String>,
}

impl SyntheticDataset {
    pub fn new(id: &str, source_group: &str, role: &'static str, labels: Vec<LabelDef>) -> Self {
        SyntheticDataset {
            id: id.to_string(),
            source_group: source_group.to_string(),
            language: "en".to_string(),
            genre: "microblog",
            role,
            pattern: PATTERN_DEFAULT,
            labels,
            external_only: Vec::new(),
        }
    }

    pub fn language(mut self, lang: &str) -> Self {
        self.language = lang.to_string();
        self
    }

    pub fn genre(mut self, genre: &'static str) -> Self {
        self.genre = genre;
        self
    }

    pub fn pattern(mut self, pattern: &'static str) -> Self {
        self.pattern = pattern;
        self
    }

    pub fn external_only(mut self, labels: &[&str]) -> Self {
        self.external_only = labels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn scaled(mut self, train: usize, valid: usize, test: usize) -> Self {
        for l in &mut self.labels {
            l.train = train;
            l.valid = valid;
            l.test = test;
        }
        self
    }
}

/// Keywords belonging to one verbalizer word. Shared words share keywords
/// across datasets, which is what makes transfer possible.
pub fn keywords_for(word: &str, count: usize) -> Vec<String> {
    let stem: String = word
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    (0..count).map(|j| format!("{stem}sig{j}")).collect()
}

fn derive_seed(base: u64, salt: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(salt.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

fn gen_text(rng: &mut ChaCha20Rng, keywords: &[String]) -> String {
    let n_fill = rng.gen_range(3..=6);
    let mut words: Vec<String> = (0..n_fill)
        .map(|_| FILLERS[rng.gen_range(0..FILLERS.len())].to_string())
        .collect();
    if !keywords.is_empty() {
        let n_kw = if keywords.len() > 1 && rng.gen_bool(0.3) {
            2
        } else {
            1
        };
        for _ in 0..n_kw {
            let kw = keywords[rng.gen_range(0..keywords.len())].clone();
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, kw);
        }
    }
    words.join(" ")
}

fn escape_toml(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write data files and a manifest for the given datasets under `dir`.
/// Returns the manifest path.
pub fn write_corpus(dir: &Path, datasets: &[SyntheticDataset], seed: u64) -> Result<PathBuf> {
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| Error::Io {
        path: data_dir.clone(),
        source: e,
    })?;

    let mut manifest = String::from("# generated synthetic corpus\n");
    for ds in datasets {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &ds.id));
        for (split, pick) in [("train", 0usize), ("valid", 1usize), ("test", 2usize)] {
            let mut rows = Vec::new();
            for label in &ds.labels {
                let count = match pick {
                    0 => label.train,
                    1 => label.valid,
                    _ => label.test,
                };
                let kws = label.keyword_pool();
                for _ in 0..count {
                    rows.push((gen_text(&mut rng, &kws), label.label.clone()));
                }
            }
            rows.shuffle(&mut rng);
            let mut body = String::from("text,label\n");
            for (text, label) in rows {
                body.push_str(&format!("{},{}\n", csv_field(&text), csv_field(&label)));
            }
            let file = data_dir.join(format!("{}_{split}.csv", ds.id));
            fs::write(&file, body).map_err(|e| Error::Io {
                path: file.clone(),
                source: e,
            })?;
        }

        manifest.push_str(&format!(
            "\n[[dataset]]\nid = \"{}\"\nsource_group = \"{}\"\nlanguage = \"{}\"\ngenre = \"{}\"\nrole = \"{}\"\nlabels = [{}]\npvp = \"pvp-{}\"\nsplit_policy = \"explicit_files\"\ntrain = \"data/{}_train.csv\"\nvalid = \"data/{}_valid.csv\"\ntest = \"data/{}_test.csv\"\n",
            ds.id,
            ds.source_group,
            ds.language,
            ds.genre,
            ds.role,
            ds.labels
                .iter()
                .map(|l| format!("\"{}\"", escape_toml(&l.label)))
                .collect::<Vec<_>>()
                .join(", "),
            ds.id,
            ds.id,
            ds.id,
            ds.id,
        ));
        if !ds.external_only.is_empty() {
            manifest.push_str(&format!(
                "external_only_labels = [{}]\n",
                ds.external_only
                    .iter()
                    .map(|l| format!("\"{}\"", escape_toml(l)))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
    }
    for ds in datasets {
        manifest.push_str(&format!(
            "\n[[pvp]]\nid = \"pvp-{}\"\npattern = \"{}\"\n[pvp.verbalizer]\n",
            ds.id, ds.pattern
        ));
        for l in &ds.labels {
            manifest.push_str(&format!(
                "\"{}\" = \"{}\"\n",
                escape_toml(&l.label),
                escape_toml(&l.word)
            ));
        }
    }

    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

/// Convenience: write and load in one step.
pub fn load_corpus(dir: &Path, datasets: &[SyntheticDataset], seed: u64) -> Result<Corpus> {
    let manifest = write_corpus(dir, datasets, seed)?;
    Corpus::load(&manifest, derive_seed(seed, "split"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteScale {
    /// A handful of rows per label; structure checks only.
    Compact,
    /// The published per-dataset sample counts.
    FullSizes,
}

fn spread(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let rem = total % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

#[allow(clippy::too_many_arguments)]
fn suite_dataset(
    scale: SuiteScale,
    id: &str,
    group: &str,
    lang: &str,
    role: &'static str,
    pattern: &'static str,
    labels: &[(&str, &str)],
    sizes: (usize, usize, usize),
    external_only: &[&str],
) -> SyntheticDataset {
    let defs: Vec<LabelDef> = match scale {
        SuiteScale::Compact => labels
            .iter()
            .map(|(l, w)| LabelDef::new(l, w).keywords(4).counts(6, 2, 2))
            .collect(),
        SuiteScale::FullSizes => {
            let train = spread(sizes.0, labels.len());
            let valid = spread(sizes.1, labels.len());
            let test = spread(sizes.2, labels.len());
            labels
                .iter()
                .enumerate()
                .map(|(i, (l, w))| {
                    LabelDef::new(l, w)
                        .keywords(4)
                        .counts(train[i], valid[i], test[i])
                })
                .collect()
        }
    };
    SyntheticDataset::new(id, group, role, defs)
        .language(lang)
        .pattern(pattern)
        .external_only(external_only)
        .genre(if group == "Stormfront" {
            "forum"
        } else {
            "microblog"
        })
}

/// The full multilingual evaluation layout: 9 external datasets, 13 targets.
/// Label sets, verbalizer words, source groups and (at `FullSizes`) sample
/// counts follow the published shared-task statistics.
pub fn shared_task_suite(scale: SuiteScale) -> Vec<SyntheticDataset> {
    let s = scale;
    vec![
        // externals
        suite_dataset(
            s,
            "ami-binary-misogyny-en",
            "AMI",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[("misogyny", "sexist"), ("normal", "neutral")],
            (3200, 800, 1000),
            &[],
        ),
        suite_dataset(
            s,
            "ami-fine-misogyny-en",
            "AMI",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[
                ("stereotype", "stereotypical"),
                ("dominance", "dominance"),
                ("derailing", "derailing"),
                ("sexual_harassment", "harassment"),
                ("discredit", "discrediting"),
            ],
            (1428, 357, 460),
            &["derailing"],
        ),
        suite_dataset(
            s,
            "ami-binary-target-en",
            "AMI",
            "en",
            "external",
            PATTERN_TARGETED,
            &[("active", "individual"), ("passive", "group")],
            (1428, 357, 460),
            &[],
        ),
        suite_dataset(
            s,
            "hasoc-fine-abusive-en",
            "HASOC",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[
                ("hate", "hate"),
                ("offensive", "offensive"),
                ("profanity", "profane"),
            ],
            (1808, 453, 288),
            &[],
        ),
        suite_dataset(
            s,
            "hasoc-binary-target-en",
            "HASOC",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[("targeted", "targeted"), ("untargeted", "general")],
            (4681, 1171, 1153),
            &["untargeted"],
        ),
        suite_dataset(
            s,
            "hateval-binary-target-en",
            "HatEval",
            "en",
            "external",
            PATTERN_TARGETED,
            &[("individual", "individual"), ("group", "group")],
            (3732, 933, 1318),
            &[],
        ),
        suite_dataset(
            s,
            "lsa-fine-abusive-en",
            "LSA",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[
                ("abusive", "abusive"),
                ("hateful", "hate"),
                ("spam", "spam"),
                ("normal", "neutral"),
            ],
            (29728, 7433, 9291),
            &["spam"],
        ),
        suite_dataset(
            s,
            "mlma-fine-hostility-en",
            "MLMA",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[
                ("abusive", "abusive"),
                ("hateful", "hate"),
                ("offensive", "offensive"),
                ("disrespectful", "disrespectful"),
                ("fearful", "fearful"),
                ("normal", "neutral"),
            ],
            (5549, 1388, 1735),
            &["disrespectful", "fearful"],
        ),
        suite_dataset(
            s,
            "srw-fine-abusive-en",
            "SRW",
            "en",
            "external",
            PATTERN_DEFAULT,
            &[
                ("sexism", "sexist"),
                ("racism", "racist"),
                ("normal", "neutral"),
            ],
            (6504, 1626, 2033),
            &[],
        ),
        // targets
        suite_dataset(
            s,
            "hasoc-fine-abusive-en-tgt",
            "HASOC",
            "en",
            "target",
            PATTERN_DEFAULT,
            &[
                ("hate", "hate"),
                ("offensive", "offensive"),
                ("profanity", "profane"),
            ],
            (1808, 453, 288),
            &[],
        ),
        suite_dataset(
            s,
            "hasoc-fine-abusive-hi-tgt",
            "HASOC",
            "hi",
            "target",
            PATTERN_DEFAULT,
            &[
                ("hate", "hate"),
                ("offensive", "offensive"),
                ("profanity", "profane"),
            ],
            (1975, 494, 605),
            &[],
        ),
        suite_dataset(
            s,
            "hasoc-fine-abusive-de-tgt",
            "HASOC",
            "de",
            "target",
            PATTERN_DEFAULT,
            &[
                ("hate", "hate"),
                ("offensive", "offensive"),
                ("profanity", "profane"),
            ],
            (325, 82, 136),
            &[],
        ),
        suite_dataset(
            s,
            "germeval-fine-offensive-de-tgt",
            "GermEval",
            "de",
            "target",
            PATTERN_DEFAULT,
            &[
                ("profanity", "profane"),
                ("insult", "insulting"),
                ("abusive", "abusive"),
                ("normal", "neutral"),
            ],
            (4007, 1002, 3532),
            &[],
        ),
        suite_dataset(
            s,
            "told-br-fine-toxicity-ptbr-tgt",
            "ToLD-Br",
            "pt-BR",
            "target",
            PATTERN_DEFAULT,
            &[
                ("LGBTQ+phobia", "homophobic"),
                ("obscene", "obscene"),
                ("insult", "insulting"),
                ("racism", "racist"),
                ("misogyny", "sexist"),
                ("xenophobia", "xenophobic"),
                ("normal", "neutral"),
            ],
            (12833, 3209, 4011),
            &[],
        ),
        suite_dataset(
            s,
            "olid-fine-target-en-tgt",
            "OLID",
            "en",
            "target",
            PATTERN_TARGETED,
            &[
                ("individual", "individual"),
                ("group", "group"),
                ("other", "other"),
            ],
            (3100, 776, 213),
            &[],
        ),
        suite_dataset(
            s,
            "stormfront-binary-hate-en-tgt",
            "Stormfront",
            "en",
            "target",
            PATTERN_DEFAULT,
            &[("hate", "hate"), ("normal", "neutral")],
            (6849, 1713, 2141),
            &[],
        ),
        suite_dataset(
            s,
            "hateval-binary-hate-en-tgt",
            "HatEval",
            "en",
            "target",
            PATTERN_DEFAULT,
            &[("hateful", "hate"), ("normal", "neutral")],
            (3055, 764, 850),
            &[],
        ),
        suite_dataset(
            s,
            "hateval-binary-hate-es-tgt",
            "HatEval",
            "es",
            "target",
            PATTERN_DEFAULT,
            &[("hateful", "hate"), ("normal", "neutral")],
            (3055, 764, 850),
            &[],
        ),
        suite_dataset(
            s,
            "olid-binary-offensive-en-tgt",
            "OLID",
            "en",
            "target",
            PATTERN_DEFAULT,
            &[("offensive", "offensive"), ("normal", "neutral")],
            (10592, 2648, 860),
            &[],
        ),
        suite_dataset(
            s,
            "germeval-binary-offensive-de-tgt",
            "GermEval",
            "de",
            "target",
            PATTERN_DEFAULT,
            &[("offensive", "offensive"), ("normal", "neutral")],
            (4007, 1002, 3532),
            &[],
        ),
        suite_dataset(
            s,
            "ami-binary-misogyny-en-tgt",
            "AMI",
            "en",
            "target",
            PATTERN_DEFAULT,
            &[("misogyny", "sexist"), ("normal", "neutral")],
            (3200, 800, 1000),
            &[],
        ),
        suite_dataset(
            s,
            "ami-binary-misogyny-it-tgt",
            "AMI",
            "it",
            "target",
            PATTERN_DEFAULT,
            &[("misogyny", "sexist"), ("normal", "neutral")],
            (3200, 800, 1000),
            &[],
        ),
    ]
}

/// Three external datasets plus one target whose `gamma` label appears in no
/// external dataset. 200 samples per label per dataset (160/20/20 splits);
/// the externals cover the `alpha` and `beta` words completely while any
/// 4-shot draw sees only a fraction of their keywords. The external-only
/// `delta` label describes the same kind of content as the unseen `gamma`
/// (shared keyword pool) under a different name, the way related labels
/// recur across real datasets.
pub fn transfer_fixture() -> Vec<SyntheticDataset> {
    let per_label =
        |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(160, 20, 20);
    vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![
                per_label("alpha", "alphaw", 8),
                per_label("normal", "neutral", 0),
            ],
        ),
        SyntheticDataset::new(
            "ext-b",
            "SrcB",
            "external",
            vec![
                per_label("beta", "betaw", 8),
                per_label("normal", "neutral", 0),
            ],
        ),
        SyntheticDataset::new(
            "ext-c",
            "SrcC",
            "external",
            vec![
                per_label("alpha", "alphaw", 8),
                per_label("beta", "betaw", 8),
                LabelDef::new("delta", "deltaw")
                    .keywords(3)
                    .keyword_stem("gammaw")
                    .counts(160, 20, 20),
                per_label("normal", "neutral", 0),
            ],
        ),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![
                LabelDef::new("alpha", "alphaw")
                    .keywords(8)
                    .counts(192, 24, 24),
                LabelDef::new("beta", "betaw")
                    .keywords(8)
                    .counts(192, 24, 24),
                LabelDef::new("gamma", "gammaw")
                    .keywords(3)
                    .counts(96, 12, 12),
                LabelDef::new("normal", "neutral")
                    .keywords(0)
                    .counts(160, 20, 20),
            ],
        ),
    ]
}
