//! Black-box tests of the `mdl` binary: exit codes, cache behavior, report
//! and plot outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdl_core::synthetic::{
    shared_task_suite, write_corpus, LabelDef, SuiteScale, SyntheticDataset,
};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mdl")
}

fn run_cmd(args: &[&str], cache_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    match cache_dir {
        Some(dir) => {
            cmd.env("MDL_CACHE_DIR", dir);
        }
        None => {
            cmd.env_remove("MDL_CACHE_DIR");
        }
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_fixture() -> Vec<SyntheticDataset> {
    let per = |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(40, 8, 10);
    vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
    ]
}

fn write_exp_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const FAST_TRAIN: &str = r#"
[train]
learning_rate = 1.0
grad_accumulation = 4
eval_every = 20
early_stop_patience = 12
"#;

#[test]
fn validate_manifest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    let out = run_cmd(
        &[
            "validate-manifest",
            "--manifest",
            dir.path().join("manifest.toml").to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("2 datasets (1 external, 1 target)"));
    assert!(text.contains("tgt-d: train 80 / valid 16 / test 20"));
}

#[test]
fn validate_manifest_rejects_broken_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.toml"), "not really toml [[[").unwrap();
    let out = run_cmd(
        &[
            "validate-manifest",
            "--manifest",
            dir.path().join("manifest.toml").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_reports_shots_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    let config = write_exp_config(
        dir.path(),
        &format!(
            r#"
manifest = "manifest.toml"
out_dir = "out"
seeds = [1, 2]
{FAST_TRAIN}
[[run]]
method = "mdl"
target = "tgt-d"

[[run]]
method = "lm-base"
target = "tgt-d"
"#
        ),
    );
    let out = run_cmd(&["run", "--config", config.to_str().unwrap()], None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out_dir = dir.path().join("out");
    let report = std::fs::read_to_string(out_dir.join("reports/tgt-d.csv")).unwrap();
    assert_eq!(report.lines().count(), 3); // header + one row per method
    assert!(report.starts_with("method,target,n,seed_count,macro_mean,macro_std"));
    assert!(out_dir.join("reports.json").exists());
    assert!(out_dir.join("provenance.json").exists());
    assert!(out_dir.join("run.log").exists());
    // the exact drawn shots are auditable
    for name in [
        "shots/tgt-d-mdl-n4-seed1-shots.csv",
        "shots/tgt-d-mdl-n4-seed2-valid.csv",
        "shots/tgt-d-lm-base-n4-seed1-shots.csv",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let shots =
        std::fs::read_to_string(out_dir.join("shots/tgt-d-mdl-n4-seed1-shots.csv")).unwrap();
    assert_eq!(shots.lines().count(), 1 + 8); // header + 4 shots x 2 labels
}

#[test]
fn run_with_unknown_dataset_exits_one_without_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    let config = write_exp_config(
        dir.path(),
        r#"
manifest = "manifest.toml"
out_dir = "out"

[[run]]
method = "mdl"
target = "tgt-d"

[[run]]
method = "mdl"
target = "does-not-exist"
"#,
    );
    let out = run_cmd(&["run", "--config", config.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        !dir.path().join("out/reports").exists(),
        "partial reports written despite invalid config"
    );
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    // a learning rate large enough to overflow the parameters mid-run
    let config = write_exp_config(
        dir.path(),
        r#"
manifest = "manifest.toml"
out_dir = "out"
seeds = [1]

[train]
learning_rate = 1e300
grad_accumulation = 2
eval_every = 5

[[run]]
method = "lm-base"
target = "tgt-d"
"#,
    );
    let out = run_cmd(&["run", "--config", config.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn train_external_caches_one_artifact_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &shared_task_suite(SuiteScale::Compact), 3).unwrap();
    // one run per target in the full multilingual layout
    let mut runs = String::new();
    for target in [
        "hasoc-fine-abusive-en-tgt",
        "hasoc-fine-abusive-hi-tgt",
        "hasoc-fine-abusive-de-tgt",
        "germeval-fine-offensive-de-tgt",
        "told-br-fine-toxicity-ptbr-tgt",
        "olid-fine-target-en-tgt",
        "stormfront-binary-hate-en-tgt",
        "hateval-binary-hate-en-tgt",
        "hateval-binary-hate-es-tgt",
        "olid-binary-offensive-en-tgt",
        "germeval-binary-offensive-de-tgt",
        "ami-binary-misogyny-en-tgt",
        "ami-binary-misogyny-it-tgt",
    ] {
        runs.push_str(&format!(
            "[[run]]\nmethod = \"mdl\"\ntarget = \"{target}\"\n\n"
        ));
    }
    let config = write_exp_config(
        dir.path(),
        &format!("manifest = \"manifest.toml\"\nout_dir = \"out\"\n{FAST_TRAIN}\n{runs}"),
    );
    let cache = dir.path().join("cache");

    let first = run_cmd(
        &["train-external", "--config", config.to_str().unwrap()],
        Some(&cache),
    );
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let text = stdout(&first);
    assert!(text.contains("4 trained"), "{text}");
    let entries = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(
        entries, 4,
        "expected one artifact per external configuration"
    );

    // warm rerun trains nothing
    let second = run_cmd(
        &["train-external", "--config", config.to_str().unwrap()],
        Some(&cache),
    );
    let text = stdout(&second);
    assert!(text.contains("0 trained"), "{text}");

    // deleting the cache forces a full retrain
    std::fs::remove_dir_all(&cache).unwrap();
    let third = run_cmd(
        &["train-external", "--config", config.to_str().unwrap()],
        Some(&cache),
    );
    let text = stdout(&third);
    assert!(text.contains("4 trained"), "{text}");
}

#[test]
fn nshot_sweep_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    let config = write_exp_config(
        dir.path(),
        &format!(
            r#"
manifest = "manifest.toml"
out_dir = "out"
seeds = [1]
{FAST_TRAIN}
[[run]]
method = "mdl"
target = "tgt-d"
n_shots = [1, 4, 8, 16, 32, 64]

[[run]]
method = "lm-base"
target = "tgt-d"
n_shots = [1, 4, 8, 16, 32, 64]
"#
        ),
    );
    let out = run_cmd(&["run", "--config", config.to_str().unwrap()], None);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("out/reports/tgt-d.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 12); // 6 rows per method

    let plot_path = dir.path().join("out/nshot.svg");
    let plotted = run_cmd(
        &[
            "plot-nshot",
            "--reports",
            dir.path().join("out/reports").to_str().unwrap(),
            "--out",
            plot_path.to_str().unwrap(),
        ],
        None,
    );
    assert!(plotted.status.success());
    let svg = std::fs::read_to_string(&plot_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<path").count(), 2);

    // a single-n report cannot be plotted
    let single = dir.path().join("single.csv");
    std::fs::write(
        &single,
        "method,target,n,seed_count,macro_mean,macro_std\nmdl,t,4,1,0.5,0.0\n",
    )
    .unwrap();
    let failed = run_cmd(
        &[
            "plot-nshot",
            "--reports",
            single.to_str().unwrap(),
            "--out",
            dir.path().join("bad.svg").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(failed.status.code(), Some(1));
}

#[test]
fn parallel_jobs_match_sequential_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_fixture(), 3).unwrap();
    let config = write_exp_config(
        dir.path(),
        &format!(
            r#"
manifest = "manifest.toml"
seeds = [1, 2]
{FAST_TRAIN}
[[run]]
method = "mdl"
target = "tgt-d"

[[run]]
method = "lm-base"
target = "tgt-d"
"#
        ),
    );
    let seq = run_cmd(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("seq").to_str().unwrap(),
        ],
        None,
    );
    assert!(seq.status.success());
    let par = run_cmd(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("par").to_str().unwrap(),
            "--jobs",
            "4",
        ],
        None,
    );
    assert!(par.status.success());
    let a = std::fs::read(dir.path().join("seq/reports/tgt-d.csv")).unwrap();
    let b = std::fs::read(dir.path().join("par/reports/tgt-d.csv")).unwrap();
    assert_eq!(a, b, "parallel execution changed report contents");
}
