use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use mdl_bench::{bench_backend, bench_prompt};
use mdl_core::backend::{ClassExample, ModelBackend, TrainConfig};
use mdl_core::eval::{macro_f1, per_label_f1, ConfusionMatrix};
use mdl_core::prompting::score_labels;

fn bench_mask_distribution(c: &mut Criterion) {
    let backend = bench_backend(32);
    let prompt = bench_prompt();
    c.bench_function("mask_distribution_dim32", |b| {
        b.iter(|| backend.mask_distribution(&prompt).unwrap())
    });
}

fn bench_train_step(c: &mut Criterion) {
    let backend = bench_backend(32);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let example = ClassExample {
        prompted: bench_prompt(),
        label_subwords: vec![
            backend.tokenize("alphaw").unwrap(),
            backend.tokenize("betaw").unwrap(),
            backend.tokenize("neutral").unwrap(),
        ],
        gold: 0,
    };
    c.bench_function("train_step_dim32", |b| {
        b.iter_batched(
            || {
                let mut fresh = backend.clone();
                fresh.begin_phase(3);
                fresh
            },
            |mut backend| {
                backend
                    .train_step(std::slice::from_ref(&example), &cfg)
                    .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_tokenize(c: &mut Criterion) {
    let backend = bench_backend(32);
    let text = "the post today alphasig3 really online thread comment saw some just again";
    c.bench_function("encode_text_12_words", |b| {
        b.iter(|| backend.vocab().encode_text(text))
    });
}

fn bench_score_labels(c: &mut Criterion) {
    let backend = bench_backend(32);
    let probs = backend.mask_distribution(&bench_prompt()).unwrap();
    let map: indexmap::IndexMap<String, Vec<usize>> = [
        ("alpha", "alphaw"),
        ("beta", "betaw"),
        ("normal", "neutral"),
    ]
    .iter()
    .map(|(l, w)| (l.to_string(), backend.tokenize(w).unwrap()))
    .collect();
    c.bench_function("score_labels_3", |b| {
        b.iter(|| score_labels(&probs, &map).unwrap())
    });
}

fn bench_f1(c: &mut Criterion) {
    let labels: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut cm = ConfusionMatrix::new(labels.clone());
    for _ in 0..10_000 {
        cm.record_index(rng.gen_range(0..5), rng.gen_range(0..5));
    }
    c.bench_function("per_label_f1_5x5", |b| {
        b.iter(|| macro_f1(&per_label_f1(&cm)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_mask_distribution,
    bench_train_step,
    bench_tokenize,
    bench_score_labels,
    bench_f1
);
criterion_main!(benches);
