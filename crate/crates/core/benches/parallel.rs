//! rayon vs sequential on the two hot loops: independent training trials
//! and per-problem answer-step evaluation. Without the `parallel` feature
//! both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use carrynet::arithmetic::{enumerate_dataset, Operator};
use carrynet::network::{answer, ModelConfig, NetworkParams};
use carrynet::par;
use carrynet::training::{train_network, AdamConfig};

fn trials(c: &mut Criterion) {
    let config = ModelConfig::new(Operator::Sub, 24, 0.9).unwrap();
    let dataset = enumerate_dataset(Operator::Sub);
    let seeds: Vec<u64> = (0..8).collect();
    let run = |seed: &u64| {
        train_network(&config, &AdamConfig::default(), &dataset, *seed, 10)
            .unwrap()
            .1
            .final_accuracy
    };
    let mut group = c.benchmark_group("trials_8x10_epochs");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| black_box(par::map(&seeds, run))));
    group.bench_function("sequential", |b| b.iter(|| black_box(par::map_seq(&seeds, run))));
    group.finish();
}

fn answer_steps(c: &mut Criterion) {
    let dataset = enumerate_dataset(Operator::Add);
    let mut group = c.benchmark_group("answer_steps_add");
    for hidden in [24, 72] {
        let config = ModelConfig::new(Operator::Add, hidden, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(hidden as u64);
        let mut params = NetworkParams::zeros_for(&config);
        params.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        let step = |op: &_| answer(&params, &config, op).unwrap().step;
        group.bench_with_input(BenchmarkId::new("parallel", hidden), &dataset, |b, d| {
            b.iter(|| black_box(par::map(d, step)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", hidden), &dataset, |b, d| {
            b.iter(|| black_box(par::map_seq(d, step)))
        });
    }
    group.finish();
}

criterion_group!(benches, trials, answer_steps);
criterion_main!(benches);
