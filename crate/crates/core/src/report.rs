//! Report files, provenance records and the append-only run log.
//!
//! Reports are delimited text, one file per target, with columns
//! `method,target,n,seed_count,macro_mean,macro_std` followed by one
//! `<label>_mean,<label>_std` pair per label in declared order. A run also
//! writes the full reports as JSON and a provenance record (config hash,
//! seeds, backend id, build id) next to them. Nothing here embeds
//! timestamps, so identical runs produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// Structured progress record; serialized as one JSON line each.
#[derive(Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord<'a> {
    PhaseStart {
        phase: &'a str,
        datasets: usize,
        seed: u64,
    },
    Step {
        phase: &'a str,
        step: u64,
        dataset: &'a str,
        loss: f64,
    },
    Eval {
        phase: &'a str,
        update: u64,
        macro_f1: f64,
        improved: bool,
    },
    PhaseEnd {
        phase: &'a str,
        updates: u64,
        best_macro_f1: f64,
        stopped_early: bool,
    },
    Warning {
        message: &'a str,
    },
    Note {
        message: &'a str,
    },
    Report {
        method: &'a str,
        target: &'a str,
        n: u32,
        macro_mean: f64,
        macro_std: f64,
    },
}

/// Append-only JSONL sink for training progress. A disabled log drops
/// records, which keeps hot test loops quiet.
pub struct RunLog {
    sink: Option<Box<dyn Write + Send>>,
}

impl RunLog {
    pub fn to_file(path: &Path) -> Result<RunLog> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        Ok(RunLog {
            sink: Some(Box::new(std::io::BufWriter::new(file))),
        })
    }

    pub fn to_writer(writer: Box<dyn Write + Send>) -> RunLog {
        RunLog { sink: Some(writer) }
    }

    pub fn disabled() -> RunLog {
        RunLog { sink: None }
    }

    pub fn record(&mut self, record: &LogRecord<'_>) {
        if let Some(sink) = self.sink.as_mut() {
            // log records are best-effort; a full disk must not kill training
            let _ = serde_json::to_writer(&mut *sink, record);
            let _ = sink.write_all(b"\n");
        }
    }

    pub fn warn(&mut self, message: &str) {
        log::warn!("{message}");
        self.record(&LogRecord::Warning { message });
    }

    pub fn note(&mut self, message: &str) {
        log::info!("{message}");
        self.record(&LogRecord::Note { message });
    }

    pub fn flush(&mut self) {
        if let Some(sink) = self.sink.as_mut() {
            let _ = sink.flush();
        }
    }
}

/// Identifier made safe for use as a file stem.
pub fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// Write one CSV per target under `<out>/reports/`, plus `reports.json`
/// with the complete records. Returns the written file paths.
pub fn write_reports(out_dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| Error::Io {
        path: reports_dir.clone(),
        source: e,
    })?;

    let mut by_target: IndexMap<&str, Vec<&EvalReport>> = IndexMap::new();
    for r in reports {
        by_target.entry(r.target.as_str()).or_default().push(r);
    }

    let mut written = Vec::new();
    for (target, rows) in &by_target {
        let labels: Vec<&String> = rows[0].per_label.keys().collect();
        let path = reports_dir.join(format!("{}.csv", safe_file_stem(target)));
        let mut out = String::new();
        out.push_str("method,target,n,seed_count,macro_mean,macro_std");
        for label in &labels {
            out.push_str(&format!(",{label}_mean,{label}_std"));
        }
        out.push('\n');
        for row in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                row.method,
                row.target,
                row.n_shots,
                row.seed_count,
                fmt_f64(row.macro_mean),
                fmt_f64(row.macro_std)
            ));
            for label in &labels {
                let (mean, std) = row.per_label.get(*label).copied().unwrap_or((0.0, 0.0));
                out.push_str(&format!(",{},{}", fmt_f64(mean), fmt_f64(std)));
            }
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        written.push(path);
    }

    let json_path = out_dir.join("reports.json");
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    fs::write(&json_path, json).map_err(|e| Error::Io {
        path: json_path.clone(),
        source: e,
    })?;
    written.push(json_path);
    Ok(written)
}

/// Machine-readable record of what produced a set of reports.
#[derive(Debug, Clone, Serialize)]
pub struct ProvenanceRecord {
    pub config_sha256: String,
    pub manifest_sha256: String,
    pub backend_id: String,
    pub seeds: Vec<u64>,
    pub seed_step1: u64,
    pub package: &'static str,
    pub version: &'static str,
    pub build_id: String,
}

impl ProvenanceRecord {
    pub fn new(
        config_bytes: &[u8],
        manifest_bytes: &[u8],
        backend_id: String,
        seeds: Vec<u64>,
        seed_step1: u64,
    ) -> Self {
        ProvenanceRecord {
            config_sha256: sha256_hex(config_bytes),
            manifest_sha256: sha256_hex(manifest_bytes),
            backend_id,
            seeds,
            seed_step1,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            build_id: build_id(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir).map_err(|e| Error::Io {
            path: out_dir.to_path_buf(),
            source: e,
        })?;
        let path = out_dir.join("provenance.json");
        let json = serde_json::to_string_pretty(self).expect("provenance serializes");
        fs::write(&path, json).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Short git-style identifier for this build, stable per released version.
pub fn build_id() -> String {
    match option_env!("BUILD_COMMIT") {
        Some(commit) => commit.chars().take(12).collect(),
        None => {
            sha256_hex(concat!(env!("CARGO_PKG_NAME"), "@", env!("CARGO_PKG_VERSION")).as_bytes())
                .chars()
                .take(12)
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SeedEval;

    fn report(method: &str, target: &str, n: u32) -> EvalReport {
        let labels = vec!["a".to_string(), "b".to_string()];
        let per_seed = vec![
            SeedEval {
                seed: 1,
                macro_f1: 0.5,
                per_label_f1: labels.iter().map(|l| (l.clone(), 0.5)).collect(),
            },
            SeedEval {
                seed: 2,
                macro_f1: 0.7,
                per_label_f1: labels.iter().map(|l| (l.clone(), 0.7)).collect(),
            },
        ];
        EvalReport::from_seed_evals(method, target, n, &labels, vec![], per_seed).unwrap()
    }

    #[test]
    fn report_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![
            report("mdl", "t1", 4),
            report("lm-base", "t1", 4),
            report("mdl", "t2", 4),
        ];
        let first = write_reports(dir.path(), &reports).unwrap();
        let bytes1: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let again = write_reports(dir.path(), &reports).unwrap();
        let bytes2: Vec<Vec<u8>> = again.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, again);
        assert_eq!(bytes1, bytes2);
        // one csv per target plus the json
        assert_eq!(first.len(), 3);
        let t1 = fs::read_to_string(&first[0]).unwrap();
        let mut lines = t1.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,target,n,seed_count,macro_mean,macro_std,a_mean,a_std,b_mean,b_std"
        );
        assert_eq!(t1.lines().count(), 3); // header + two method rows
        assert!(t1.contains("mdl,t1,4,2,0.600000,0.100000"));
    }

    #[test]
    fn provenance_is_stable_and_complete() {
        let p1 = ProvenanceRecord::new(b"cfg", b"man", "backend-x".into(), vec![1, 2], 9);
        let p2 = ProvenanceRecord::new(b"cfg", b"man", "backend-x".into(), vec![1, 2], 9);
        assert_eq!(p1.config_sha256, p2.config_sha256);
        assert_eq!(p1.build_id, p2.build_id);
        assert_eq!(p1.build_id.len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let path = p1.write(dir.path()).unwrap();
        let body = fs::read_to_string(path).unwrap();
        assert!(body.contains("backend-x"));
        assert!(body.contains("build_id"));
    }

    #[test]
    fn run_log_writes_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut log = RunLog::to_file(&path).unwrap();
        log.record(&LogRecord::PhaseStart {
            phase: "external",
            datasets: 3,
            seed: 7,
        });
        log.record(&LogRecord::Step {
            phase: "external",
            step: 1,
            dataset: "d1",
            loss: 0.5,
        });
        log.flush();
        let body = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["event"], "phase_start");
        // appending keeps prior content
        let mut log2 = RunLog::to_file(&path).unwrap();
        log2.warn("careful");
        log2.flush();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
    }
}
