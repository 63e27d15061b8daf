use criterion::{criterion_group, criterion_main, Criterion};
use kgh_core::fixtures::{gold_candidate_sets, intents_fixture, roots_only, synthetic_gold};
use kgh_core::ingest::{load_snapshot, save_snapshot};
use kgh_core::{generate_cyclical, generate_one_shot, GenerateOptions, GraphSnapshot, MockOracle, MockOracleConfig, TemplateSet};

fn strategies(c: &mut Criterion) {
    let gold = synthetic_gold(5, 200, 5200);
    let base = roots_only(&gold);
    let sets = gold_candidate_sets(&gold);
    let templates = TemplateSet::default();
    let options = GenerateOptions::default();
    let mock = MockOracle::new(gold.clone(), MockOracleConfig::noiseless(0));
    let mut group = c.benchmark_group("generate, depth 5, 200 nodes");
    group.bench_function("one_shot", |b| {
        b.iter(|| {
            for s in &sets {
                generate_one_shot(&base, s, &mock, &templates, &options).unwrap();
            }
        })
    });
    group.bench_function("cyclical", |b| {
        b.iter(|| {
            for s in &sets {
                generate_cyclical(&base, s, &mock, &templates, &options).unwrap();
            }
        })
    });
    group.finish();
}

fn snapshots(c: &mut Criterion) {
    let snap = GraphSnapshot::new(intents_fixture().after);
    let bytes = save_snapshot(&snap);
    let mut group = c.benchmark_group("snapshot, 12k nodes");
    group.sample_size(20);
    group.bench_function("save", |b| b.iter(|| save_snapshot(&snap)));
    group.bench_function("load", |b| b.iter(|| load_snapshot(&bytes).unwrap()));
    group.finish();
}

criterion_group!(benches, strategies, snapshots);
criterion_main!(benches);
