use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hrt_core::attention::{highway_attention, multi_head_attention};
use hrt_core::data::generate_synthetic;
use hrt_core::sampling::sample_negatives;
use hrt_core::train::train_step;
use hrt_core::{
    AdamConfig, AdamState, AttentionOptions, Config, HighwayParams, Model, ParamStore, Tape, Tensor, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        &[rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    let (d_f, heads, d_p) = (64, 4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let p = HighwayParams::init(&mut store, "hw", d_f, heads, d_p, &mut rng).unwrap();
    let opts = AttentionOptions::default();
    for len in [8, 32, 128] {
        let q = random(&mut rng, len, d_f);
        let k = random(&mut rng, len, d_f);
        group.bench_with_input(BenchmarkId::new("multi_head", len), &len, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new(&store);
                let (qv, kv) = (tape.constant(q.clone()), tape.constant(k.clone()));
                black_box(multi_head_attention(&mut tape, qv, kv, kv, &p.attn, opts).unwrap());
            })
        });
        group.bench_with_input(BenchmarkId::new("highway", len), &len, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new(&store);
                let (qv, kv) = (tape.constant(q.clone()), tape.constant(k.clone()));
                black_box(highway_attention(&mut tape, qv, kv, kv, &p, opts).unwrap());
            })
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus = generate_synthetic(4, 100, &mut rng);
    let cfg = Config::default();
    let model = Model::new(cfg.model.clone(), Vocabulary::build(&corpus)).unwrap();
    let record = &corpus[0];
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("score_all_100_candidates", |b| {
        b.iter(|| black_box(model.score_all(record).unwrap()))
    });

    let sample = sample_negatives(record, cfg.loss.candidates_per_sample, &mut rng).unwrap();
    let mut trained = model.clone();
    let mut adam = AdamState::new(&trained.params.store, AdamConfig::default());
    group.bench_function("train_step_10_candidates", |b| {
        b.iter(|| black_box(train_step(&mut trained, &mut adam, &cfg, &sample, 1).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, attention, scoring);
criterion_main!(benches);
