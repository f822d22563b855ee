//! Experiment configuration files.
//!
//! Experiments are file-first: the TOML config names the manifest, the
//! backend, the seeds and the run matrix; command-line flags override
//! individual fields. An `n_shots` list expands one entry into one run per
//! value, which is how n-shot sweeps are written.

use std::path::{Path, PathBuf};

use mdl_core::backend::TrainConfig;
use mdl_core::error::{Error, Result};
use mdl_core::trainer::{MethodKind, RunDescriptor};
use serde::Deserialize;

pub const CACHE_DIR_ENV: &str = "MDL_CACHE_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_seed_step1")]
    pub seed_step1: u64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub backend_params: BackendParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, rename = "run")]
    pub runs: Vec<RunEntry>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_seed_step1() -> u64 {
    13
}

fn default_split_seed() -> u64 {
    42
}

fn default_backend() -> String {
    "reference".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_init_seed")]
    pub init_seed: u64,
}

fn default_dim() -> usize {
    32
}

fn default_init_seed() -> u64 {
    7
}

impl Default for BackendParams {
    fn default() -> Self {
        BackendParams {
            dim: default_dim(),
            init_seed: default_init_seed(),
        }
    }
}

/// One config entry; expands to one descriptor per n value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub method: MethodKind,
    pub target: String,
    #[serde(default)]
    pub related: Option<String>,
    #[serde(default = "default_n_shots")]
    pub n_shots: NShots,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub valid_size: Option<u32>,
}

fn default_n_shots() -> NShots {
    NShots::One(4)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NShots {
    One(u32),
    Sweep(Vec<u32>),
}

impl NShots {
    pub fn values(&self) -> Vec<u32> {
        match self {
            NShots::One(n) => vec![*n],
            NShots::Sweep(v) => v.clone(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig {
                message: format!("{}: {e}", path.display()),
            })?;
        // paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if config.manifest.is_relative() {
            config.manifest = base.join(&config.manifest);
        }
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        Ok((config, bytes))
    }

    /// Expand run entries into descriptors. An entry without its own seed
    /// list takes the global seeds; a joint-training entry takes the first
    /// global seed, since it runs with a single seed.
    pub fn descriptors(&self) -> Result<Vec<RunDescriptor>> {
        if self.runs.is_empty() {
            return Err(Error::InvalidConfig {
                message: "config declares no [[run] ] entries".into(),
            });
        }
        let mut out = Vec::new();
        for entry in &self.runs {
            let seeds = match (&entry.seeds, entry.method) {
                (Some(s), _) => s.clone(),
                (None, MethodKind::Mtl) => vec![self.seeds[0]],
                (None, _) => self.seeds.clone(),
            };
            for n in entry.n_shots.values() {
                out.push(RunDescriptor {
                    method: entry.method,
                    target: entry.target.clone(),
                    related: entry.related.clone(),
                    n_shots: n,
                    valid_size: entry.valid_size.unwrap_or(16),
                    seeds_step2: seeds.clone(),
                    seed_step1: self.seed_step1,
                    config: self.train.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Cache directory: environment override, otherwise `<out>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.join("cache"),
        }
    }
}
