use std::path::PathBuf;

/// Errors produced by the corpus, prompting, sampling, backend and training
/// layers. Configuration-shaped problems (bad manifests, unknown ids) are
/// distinguished from runtime failures so callers can map them to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },

    #[error("dataset '{dataset}': data file {path} is missing")]
    MissingDataFile { dataset: String, path: PathBuf },

    #[error("dataset '{dataset}': failed to parse {path}: {message}")]
    DataParse {
        dataset: String,
        path: PathBuf,
        message: String,
    },

    #[error("duplicate dataset id '{id}' in manifest")]
    DuplicateDatasetId { id: String },

    #[error("duplicate pvp id '{id}' in manifest")]
    DuplicatePvpId { id: String },

    #[error("dataset '{dataset}' references unknown pvp '{pvp}'")]
    UnknownPvp { dataset: String, pvp: String },

    #[error("dataset '{dataset}', row {row}: label '{label}' is not declared and has no canonicalization")]
    UnknownLabel {
        dataset: String,
        row: usize,
        label: String,
    },

    #[error("dataset '{dataset}', row {row}: text is empty after trimming")]
    EmptyText { dataset: String, row: usize },

    #[error("dataset '{dataset}': {message}")]
    InvalidDataset { dataset: String, message: String },

    #[error("label canon map is not idempotent: '{alias}' -> '{canon}' but '{canon}' is itself an alias")]
    CanonNotIdempotent { alias: String, canon: String },

    #[error("pvp '{pvp}': invalid pattern: {message}")]
    InvalidPattern { pvp: String, message: String },

    #[error("pvp '{pvp}': invalid verbalizer: {message}")]
    InvalidVerbalizer { pvp: String, message: String },

    #[error("cannot apply ratio split: {got} samples, need at least {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("cannot apply pattern to empty text")]
    EmptyPromptText,

    #[error("verbalizer word '{word}' for label '{label}' contains an unknown token")]
    UnknownVerbalizerToken { label: String, word: String },

    #[error("all label scores are zero; backend produced a degenerate distribution")]
    DegenerateScores,

    #[error("prompted text must contain exactly one mask token, found {found}")]
    BadMaskCount { found: usize },

    #[error("label '{label}' has no training samples to draw shots from")]
    EmptyLabelPool { label: String },

    #[error("non-finite loss at micro-step {step} (dataset '{dataset}'); aborting run")]
    NonFiniteLoss { step: u64, dataset: String },

    #[error("unknown dataset id '{id}' referenced by run configuration")]
    UnknownDatasetId { id: String },

    #[error("method '{method}' requires a related dataset but none was given")]
    MissingRelated { method: String },

    #[error("method '{method}' uses a single seed, got {got}")]
    SeedCount { method: String, got: usize },

    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },

    #[error("cannot aggregate an empty metric collection")]
    EmptyAggregate,

    #[error("not enough points to plot: {message}")]
    InsufficientPlotData { message: String },

    #[error("model cache error at {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl Error {
    /// True for errors caused by user-supplied configuration (manifests,
    /// run configs, ids) as opposed to runtime/training failures.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::DegenerateScores | Error::Cache { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
