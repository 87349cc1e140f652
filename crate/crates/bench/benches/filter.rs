use std::hint::black_box;

use aqf_bench::{filled, keys, sorted_items};
use aqf_core::{bulk_load, merge, AdaptiveFilter, FilterConfig, Policy};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

const Q: u32 = 16;
const R: u32 = 9;

fn insert(c: &mut Criterion) {
    let cfg = FilterConfig::new(Q, R, 1).unwrap();
    let ks = aqf_bench::fill_keys(Q, 0.9, 0);
    let mut g = c.benchmark_group("insert");
    g.throughput(Throughput::Elements(ks.len() as u64));
    g.bench_function("sequential_to_90pct", |b| {
        b.iter(|| {
            let mut f = AdaptiveFilter::new(cfg).unwrap();
            for &k in &ks {
                f.insert(k, None).unwrap();
            }
            f
        })
    });
    let items = sorted_items(&ks, &cfg);
    g.bench_function("bulk_to_90pct_presorted", |b| {
        b.iter_batched(
            || items.clone(),
            |items| bulk_load(items, cfg, Policy::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn lookup(c: &mut Criterion) {
    let (f, ks) = filled(Q, R, 0.9, Policy::default());
    let neg = keys(100_000, 7);
    let mut g = c.benchmark_group("lookup");
    g.throughput(Throughput::Elements(neg.len() as u64));
    g.bench_function("may_contain_positive", |b| {
        b.iter(|| ks.iter().take(neg.len()).filter(|&&k| f.may_contain(black_box(k))).count())
    });
    g.bench_function("may_contain_negative", |b| {
        b.iter(|| neg.iter().filter(|&&k| f.may_contain(black_box(k))).count())
    });
    g.bench_function("lookup_frozen_negative", |b| {
        b.iter(|| neg.iter().filter(|&&k| f.lookup_frozen(black_box(k)).unwrap().filter_matched()).count())
    });
    g.finish();
}

fn adapt(c: &mut Criterion) {
    let (f, _) = filled(Q, R, 0.9, Policy::default());
    let neg = keys(100_000, 9);
    let mut g = c.benchmark_group("adapt");
    g.throughput(Throughput::Elements(neg.len() as u64));
    g.bench_function("first_pass_negatives", |b| {
        b.iter_batched_ref(
            || f.clone(),
            |f| {
                for &k in &neg {
                    black_box(f.lookup(k).unwrap());
                }
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn merge_bench(c: &mut Criterion) {
    let cfg = FilterConfig::new(Q, R, 1).unwrap();
    let half = |stream| {
        let ks = keys(((1u64 << Q) as f64 * 0.4) as usize, stream);
        bulk_load(sorted_items(&ks, &cfg), cfg, Policy::default()).unwrap()
    };
    let (a, b2) = (half(1), half(2));
    let mut g = c.benchmark_group("merge");
    g.throughput(Throughput::Elements((a.len() + b2.len()) as u64));
    g.bench_function("two_40pct_tables", |b| b.iter(|| merge(&a, &b2).unwrap()));
    g.finish();
}

criterion_group!(benches, insert, lookup, adapt, merge_bench);
criterion_main!(benches);
