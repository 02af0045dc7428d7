use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairmac_core::schemes::{feasibility, max_supported_rate};
use fairmac_core::{throughput_bound, ChannelParams, MacParams, RateTable, SchemeKind, TargetRate, Topology};

fn bound(c: &mut Criterion) {
    let mut group = c.benchmark_group("throughput_bound");
    for n in [5usize, 40, 1000] {
        let mac = MacParams::new(n, 0.001, 0.002).unwrap();
        let d = TargetRate::new(1.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &mac, |b, m| {
            b.iter(|| throughput_bound(black_box(d), black_box(m)))
        });
    }
    group.finish();
}

fn helpers(c: &mut Criterion) {
    let mut group = c.benchmark_group("feasibility");
    let channel = ChannelParams::new(1.0, 2.0).unwrap();
    for n in [20usize, 100] {
        let rates = RateTable::build(&Topology::generate(n, 7).unwrap(), &channel).unwrap();
        let d = TargetRate::new(max_supported_rate(&rates, SchemeKind::DecodeForward)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &rates, |b, r| {
            b.iter(|| feasibility(black_box(r), d, SchemeKind::DecodeForward))
        });
    }
    group.finish();
}

criterion_group!(benches, bound, helpers);
criterion_main!(benches);
