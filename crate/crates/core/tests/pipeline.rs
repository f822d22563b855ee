//! End-to-end runs of the training pipeline on synthetic corpora.

use mdl_core::backend::{reference_from_corpus, TrainConfig};
use mdl_core::corpus::{distinct_external_configs, leakage_filter, Corpus};
use mdl_core::report::RunLog;
use mdl_core::synthetic::{
    desk_scale_config, load_corpus, shared_task_suite, transfer_fixture, LabelDef, SuiteScale,
    SyntheticDataset,
};
use mdl_core::trainer::{MethodKind, ModelCache, RunDescriptor, Trainer};

fn fixture_config() -> TrainConfig {
    desk_scale_config()
}

fn descriptor(method: MethodKind, target: &str, seeds: &[u64]) -> RunDescriptor {
    let mut d = RunDescriptor::new(method, target);
    d.seeds_step2 = seeds.to_vec();
    d.config = fixture_config();
    d
}

fn small_fixture() -> Vec<SyntheticDataset> {
    let per = |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(40, 8, 10);
    vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![per("alpha", "alphaw", 6), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "ext-b",
            "SrcB",
            "external",
            vec![per("beta", "betaw", 6), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "rel-r",
            "SrcR",
            "related",
            vec![
                per("alpha", "alphaw", 6),
                per("gamma", "gammaw", 3),
                per("normal", "neutral", 0),
            ],
        ),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![
                per("alpha", "alphaw", 6),
                per("gamma", "gammaw", 3),
                per("normal", "neutral", 0),
            ],
        ),
    ]
}

fn run_one(corpus: &Corpus, desc: &RunDescriptor) -> mdl_core::eval::EvalReport {
    let backend = reference_from_corpus(corpus, 16, 7);
    let mut trainer = Trainer::new(corpus, backend, ModelCache::in_memory());
    let mut log = RunLog::disabled();
    trainer.run(desc, &mut log).unwrap()
}

#[test]
fn mdl_report_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    let report = run_one(&corpus, &descriptor(MethodKind::Mdl, "tgt-d", &[1, 2]));
    assert_eq!(report.method, "mdl");
    assert_eq!(report.target, "tgt-d");
    assert_eq!(report.seed_count, 2);
    assert_eq!(report.per_seed.len(), 2);
    assert_eq!(report.per_label.len(), 3);
    assert!(report.macro_mean > 0.0 && report.macro_mean <= 1.0);
    // gamma's word appears in no external dataset, alpha's does
    assert_eq!(report.unseen_labels, vec!["gamma".to_string()]);
}

#[test]
fn single_seed_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    let report = run_one(&corpus, &descriptor(MethodKind::LmBase, "tgt-d", &[3]));
    assert_eq!(report.seed_count, 1);
    assert_eq!(report.macro_std, 0.0);
    // lm-base trains on no externals: every target label counts as unseen
    assert_eq!(report.unseen_labels.len(), 3);
}

#[test]
fn mdl_with_no_externals_is_bitwise_lm_base() {
    let dir = tempfile::tempdir().unwrap();
    // corpus whose only external shares the target's source group, so the
    // leakage filter empties the external set
    let per = |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(30, 6, 8);
    let defs = vec![
        SyntheticDataset::new(
            "ext-same",
            "SrcD",
            "external",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
    ];
    let corpus = load_corpus(dir.path(), &defs, 5).unwrap();
    let mdl = run_one(&corpus, &descriptor(MethodKind::Mdl, "tgt-d", &[1, 2]));
    let lm = run_one(&corpus, &descriptor(MethodKind::LmBase, "tgt-d", &[1, 2]));
    assert!(mdl.same_results(&lm), "mdl {mdl:?}\nlm {lm:?}");
}

#[test]
fn step1_artifacts_are_shared_between_matching_targets() {
    let dir = tempfile::tempdir().unwrap();
    let per = |l: &str, w: &str| LabelDef::new(l, w).keywords(4).counts(30, 6, 8);
    let defs = vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![
                per("alpha", "alphaw"),
                LabelDef::new("normal", "neutral")
                    .keywords(0)
                    .counts(30, 6, 8),
            ],
        ),
        SyntheticDataset::new(
            "tgt-1",
            "SrcT1",
            "target",
            vec![
                per("alpha", "alphaw"),
                LabelDef::new("normal", "neutral")
                    .keywords(0)
                    .counts(30, 6, 8),
            ],
        ),
        SyntheticDataset::new(
            "tgt-2",
            "SrcT2",
            "target",
            vec![
                per("alpha", "alphaw"),
                LabelDef::new("normal", "neutral")
                    .keywords(0)
                    .counts(30, 6, 8),
            ],
        ),
    ];
    let corpus = load_corpus(dir.path(), &defs, 3).unwrap();
    let backend = reference_from_corpus(&corpus, 16, 7);
    let mut trainer = Trainer::new(&corpus, backend, ModelCache::in_memory());
    let mut log = RunLog::disabled();
    trainer
        .run(&descriptor(MethodKind::Mdl, "tgt-1", &[1]), &mut log)
        .unwrap();
    let misses_after_first = trainer.cache().misses;
    trainer
        .run(&descriptor(MethodKind::Mdl, "tgt-2", &[1]), &mut log)
        .unwrap();
    // same filtered external set: the second run reuses the cached artifact
    assert_eq!(trainer.cache().misses, misses_after_first);
    assert!(trainer.cache().hits >= 1);
}

#[test]
fn cross_methods_with_empty_externals_collapse_to_single() {
    let dir = tempfile::tempdir().unwrap();
    // the lone external shares the target's group, so filtering removes it
    let per = |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(30, 6, 8);
    let defs = vec![
        SyntheticDataset::new(
            "ext-same",
            "SrcD",
            "external",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "rel-r",
            "SrcR",
            "related",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
    ];
    let corpus = load_corpus(dir.path(), &defs, 8).unwrap();
    let with_related = |method| {
        let mut d = descriptor(method, "tgt-d", &[1, 2]);
        d.related = Some("rel-r".to_string());
        d
    };
    let joint = run_one(&corpus, &with_related(MethodKind::CrossJoint));
    let steps3 = run_one(&corpus, &with_related(MethodKind::Cross3Steps));
    let single = run_one(&corpus, &with_related(MethodKind::CrossSingle));
    assert!(
        joint.same_results(&single),
        "joint {joint:?}\nsingle {single:?}"
    );
    assert!(
        steps3.same_results(&single),
        "3steps {steps3:?}\nsingle {single:?}"
    );
}

#[test]
fn mdl_spec_with_no_removals_is_bitwise_mdl() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    // small_fixture declares no external_only_labels anywhere
    let spec = run_one(&corpus, &descriptor(MethodKind::MdlSpec, "tgt-d", &[1, 2]));
    let mdl = run_one(&corpus, &descriptor(MethodKind::Mdl, "tgt-d", &[1, 2]));
    assert!(spec.same_results(&mdl));
}

#[test]
fn mdl_spec_removal_drops_labels_and_renormalizes() {
    let dir = tempfile::tempdir().unwrap();
    let per = |l: &str, w: &str, k: usize| LabelDef::new(l, w).keywords(k).counts(32, 8, 8);
    let defs = vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![
                per("alpha", "alphaw", 5),
                per("spamish", "spammy", 4),
                per("normal", "neutral", 0),
            ],
        )
        .external_only(&["spamish"]),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
    ];
    let corpus = load_corpus(dir.path(), &defs, 4).unwrap();
    let backend = reference_from_corpus(&corpus, 16, 7);
    let mut trainer = Trainer::new(&corpus, backend, ModelCache::in_memory());
    let mut log = RunLog::disabled();
    let spec_report = trainer
        .run(&descriptor(MethodKind::MdlSpec, "tgt-d", &[1]), &mut log)
        .unwrap();
    trainer
        .run(&descriptor(MethodKind::Mdl, "tgt-d", &[1]), &mut log)
        .unwrap();
    // the removal changes the step-1 training inputs, so the two methods
    // cannot share a cached artifact
    assert_eq!(trainer.cache().misses, 2);
    assert_eq!(spec_report.per_label.len(), 2);

    // a removal that empties the only external drops the dataset entirely,
    // which degenerates to adapting from the initial model
    let dir2 = tempfile::tempdir().unwrap();
    let defs2 = vec![
        SyntheticDataset::new(
            "ext-a",
            "SrcA",
            "external",
            vec![per("spamish", "spammy", 4)],
        )
        .external_only(&["spamish"]),
        SyntheticDataset::new(
            "tgt-d",
            "SrcD",
            "target",
            vec![per("alpha", "alphaw", 5), per("normal", "neutral", 0)],
        ),
    ];
    let corpus2 = load_corpus(dir2.path(), &defs2, 4).unwrap();
    let emptied = run_one(&corpus2, &descriptor(MethodKind::MdlSpec, "tgt-d", &[1, 2]));
    let lm = run_one(&corpus2, &descriptor(MethodKind::LmBase, "tgt-d", &[1, 2]));
    assert!(emptied.same_results(&lm));
}

#[test]
fn mtl_requires_a_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    let desc = descriptor(MethodKind::Mtl, "tgt-d", &[1, 2]);
    assert!(desc.validate(&corpus).is_err());
    let ok = descriptor(MethodKind::Mtl, "tgt-d", &[1]);
    assert!(ok.validate(&corpus).is_ok());
    let report = run_one(&corpus, &ok);
    assert_eq!(report.method, "mtl");
    assert_eq!(report.seed_count, 1);
}

#[test]
fn suite_filtering_structure_matches_published_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &shared_task_suite(SuiteScale::Compact), 2).unwrap();
    let externals = corpus.externals();
    let targets = corpus.targets();

    // the AMI target drops the three AMI externals
    let ami_it = corpus.get("ami-binary-misogyny-it-tgt").unwrap();
    assert_eq!(leakage_filter(&externals, &ami_it.spec).len(), 6);
    // a target family absent from the externals keeps all nine
    let stormfront = corpus.get("stormfront-binary-hate-en-tgt").unwrap();
    assert_eq!(leakage_filter(&externals, &stormfront.spec).len(), 9);
    // four distinct external configurations over the thirteen targets
    assert_eq!(distinct_external_configs(&externals, &targets).len(), 4);
}

#[test]
fn transfer_fixture_mdl_beats_lm_base() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &transfer_fixture(), 21).unwrap();
    let seeds = [1, 2, 3];
    let mdl = run_one(&corpus, &descriptor(MethodKind::Mdl, "tgt-d", &seeds));
    let lm = run_one(&corpus, &descriptor(MethodKind::LmBase, "tgt-d", &seeds));
    assert!(
        mdl.macro_mean > lm.macro_mean,
        "mdl {} vs lm-base {}",
        mdl.macro_mean,
        lm.macro_mean
    );
}

#[test]
fn mlm_baseline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    let report = run_one(&corpus, &descriptor(MethodKind::Mlm, "tgt-d", &[1, 2]));
    assert_eq!(report.method, "mlm");
    assert_eq!(report.seed_count, 2);
    assert!(report.macro_mean.is_finite());
    // domain-adaptive pretraining sees labels only through adaptation, but
    // the externals it read still count as used data for unseen flags
    assert_eq!(report.unseen_labels, vec!["gamma".to_string()]);
}

#[test]
fn full_size_suite_reproduces_published_sample_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(
        dir.path(),
        &shared_task_suite(mdl_core::synthetic::SuiteScale::FullSizes),
        6,
    )
    .unwrap();
    let hasoc = corpus.get("hasoc-fine-abusive-en").unwrap();
    assert_eq!(hasoc.set.counts(), (1808, 453, 288));
    assert_eq!(
        corpus.report.counts["hasoc-fine-abusive-de-tgt"],
        (325, 82, 136)
    );
    assert_eq!(
        corpus.report.counts["told-br-fine-toxicity-ptbr-tgt"],
        (12833, 3209, 4011)
    );
    assert_eq!(
        corpus.report.counts["lsa-fine-abusive-en"],
        (29728, 7433, 9291)
    );
}

#[test]
fn unknown_target_id_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(dir.path(), &small_fixture(), 11).unwrap();
    let desc = descriptor(MethodKind::Mdl, "nope", &[1]);
    assert!(matches!(
        desc.validate(&corpus),
        Err(mdl_core::Error::UnknownDatasetId { .. })
    ));
}
