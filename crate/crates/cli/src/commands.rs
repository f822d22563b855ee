//! Implementations behind the CLI subcommands.

use std::path::{Path, PathBuf};

use mdl_core::backend::reference_from_corpus;
use mdl_core::corpus::Corpus;
use mdl_core::error::{Error, Result};
use mdl_core::eval::EvalReport;
use mdl_core::report::{write_reports, ProvenanceRecord, RunLog};
use mdl_core::trainer::{ModelCache, Trainer};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::plot;

pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub written: Vec<PathBuf>,
    pub provenance: PathBuf,
}

fn load_corpus_for(config: &ExperimentConfig) -> Result<(Corpus, Vec<u8>)> {
    let manifest_bytes = std::fs::read(&config.manifest).map_err(|e| Error::Io {
        path: config.manifest.clone(),
        source: e,
    })?;
    let corpus = Corpus::load(&config.manifest, config.split_seed)?;
    Ok((corpus, manifest_bytes))
}

fn build_backend(
    config: &ExperimentConfig,
    corpus: &Corpus,
) -> Result<mdl_core::backend::ReferenceBackend> {
    match config.backend.as_str() {
        "reference" => Ok(reference_from_corpus(
            corpus,
            config.backend_params.dim,
            config.backend_params.init_seed,
        )),
        other => Err(Error::InvalidConfig {
            message: format!("unknown backend '{other}' (available: reference)"),
        }),
    }
}

/// Load, canonicalize and summarize a manifest.
pub fn validate_manifest(manifest: &Path, split_seed: u64) -> Result<String> {
    let corpus = Corpus::load(manifest, split_seed)?;
    let mut out = String::new();
    out.push_str(&format!(
        "manifest ok: {} datasets ({} external, {} target)\n",
        corpus.len(),
        corpus.externals().len(),
        corpus.targets().len()
    ));
    for (id, (train, valid, test)) in &corpus.report.counts {
        let ds = corpus.get(id)?;
        out.push_str(&format!(
            "  {id}: train {train} / valid {valid} / test {test}, labels [{}], pvp '{}'\n",
            ds.spec.labels.join(", "),
            ds.spec.pvp_id
        ));
    }
    for w in &corpus.report.warnings {
        out.push_str(&format!("  warning: {w}\n"));
    }
    Ok(out)
}

/// Warm the stage-1 cache for every run in the config. Returns a summary.
pub fn train_external(config: &ExperimentConfig) -> Result<String> {
    let (corpus, _) = load_corpus_for(config)?;
    let descriptors = config.descriptors()?;
    for d in &descriptors {
        d.validate(&corpus)?;
    }
    let backend = build_backend(config, &corpus)?;
    let cache = ModelCache::new(Some(config.cache_dir()))?;
    let mut trainer = Trainer::new(&corpus, backend, cache);
    let mut log = RunLog::to_file(&config.out_dir.join("run.log"))?;
    let (trained, hits) = trainer.warm_external_cache(&descriptors, &mut log)?;
    log.flush();
    Ok(format!(
        "stage-1 cache at {}: {trained} trained, {hits} already cached; entries on disk: {}\n",
        config.cache_dir().display(),
        trainer.cache().entry_count()
    ))
}

/// Run every descriptor and write reports plus provenance. Descriptors are
/// validated up front so an invalid run leaves no partial report behind.
pub fn run(config: &ExperimentConfig, config_bytes: &[u8], jobs: usize) -> Result<RunOutcome> {
    let (corpus, manifest_bytes) = load_corpus_for(config)?;
    let descriptors = config.descriptors()?;
    for d in &descriptors {
        d.validate(&corpus)?;
    }
    let backend = build_backend(config, &corpus)?;
    let backend_id_str = {
        use mdl_core::backend::ModelBackend;
        backend.backend_id()
    };
    let cache_dir = config.cache_dir();

    let reports: Vec<EvalReport> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig {
                message: format!("cannot build thread pool: {e}"),
            })?;
        // each run gets its own trainer over a shared disk cache; logs are
        // buffered per run and appended in config order
        let indexed: Result<Vec<(usize, EvalReport, Vec<u8>)>> = pool.install(|| {
            descriptors
                .par_iter()
                .enumerate()
                .map(|(i, desc)| {
                    let cache = ModelCache::new(Some(cache_dir.clone()))?;
                    let mut trainer = Trainer::new(&corpus, backend.clone(), cache)
                        .with_audit_dir(config.out_dir.join("shots"));
                    let buffer = std::sync::Arc::new(std::sync::Mutex::new(Vec::<u8>::new()));
                    let writer = SharedBuffer(buffer.clone());
                    let mut log = RunLog::to_writer(Box::new(writer));
                    let report = trainer.run(desc, &mut log)?;
                    log.flush();
                    let bytes = buffer.lock().expect("log buffer").clone();
                    Ok((i, report, bytes))
                })
                .collect()
        });
        let mut indexed = indexed?;
        indexed.sort_by_key(|(i, _, _)| *i);
        let log_path = config.out_dir.join("run.log");
        if let Some(parent) = log_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let mut merged: Vec<u8> = Vec::new();
        for (_, _, bytes) in &indexed {
            merged.extend_from_slice(bytes);
        }
        use std::io::Write as _;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .and_then(|mut f| f.write_all(&merged))
            .map_err(|e| Error::Io {
                path: log_path,
                source: e,
            })?;
        indexed.into_iter().map(|(_, r, _)| r).collect()
    } else {
        let cache = ModelCache::new(Some(cache_dir))?;
        let mut trainer =
            Trainer::new(&corpus, backend, cache).with_audit_dir(config.out_dir.join("shots"));
        let mut log = RunLog::to_file(&config.out_dir.join("run.log"))?;
        let mut out = Vec::with_capacity(descriptors.len());
        for desc in &descriptors {
            out.push(trainer.run(desc, &mut log)?);
        }
        log.flush();
        out
    };

    let written = write_reports(&config.out_dir, &reports)?;
    let provenance = ProvenanceRecord::new(
        config_bytes,
        &manifest_bytes,
        backend_id_str,
        config.seeds.clone(),
        config.seed_step1,
    )
    .write(&config.out_dir)?;
    Ok(RunOutcome {
        reports,
        written,
        provenance,
    })
}

struct SharedBuffer(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl std::io::Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("log buffer").extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Render the n-shot sweep from report files into an SVG.
pub fn plot_nshot(reports: &[PathBuf], out: &Path) -> Result<String> {
    let rows = plot::read_report_rows(reports)?;
    let series = plot::collect_series(&rows);
    let svg = plot::render_nshot_svg(&series)?;
    plot::write_plot(out, &svg)?;
    Ok(format!(
        "wrote {} ({} series, {} rows)\n",
        out.display(),
        series.len(),
        rows.len()
    ))
}
