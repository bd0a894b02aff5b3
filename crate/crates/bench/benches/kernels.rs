use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use senet_bench::filled;
use senet_core::arch::preset;
use senet_core::complexity::analyze;
use senet_core::ops::conv::{conv2d, ConvGeometry};
use senet_core::se::{init_se_params, se_forward, SeConfig};
use senet_core::{build_network, Dims};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (name, ch, groups) in [("3x3", 64, 1), ("3x3_g32", 128, 32)] {
        let x = filled(Dims::new(8, ch, 16, 16));
        let w = filled(Dims::new(ch, ch / groups, 3, 3));
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conv2d(black_box(&x), black_box(&w), None, ConvGeometry::new(1, 1, groups)).unwrap())
        });
    }
    g.finish();
}

fn se(c: &mut Criterion) {
    let mut g = c.benchmark_group("se_forward");
    for ch in [64, 256] {
        let cfg = SeConfig::new(ch);
        let params = init_se_params(&cfg, 0);
        let u = filled(Dims::new(8, ch, 14, 14));
        g.bench_function(BenchmarkId::from_parameter(ch), |b| {
            b.iter(|| se_forward(black_box(&u), &params, &cfg).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut net = build_network(&preset("toy-se").unwrap(), 0).unwrap();
    net.set_identity_bn_stats();
    let x = filled(Dims::new(32, 4, 8, 8));
    c.bench_function("toy_se_predict_b32", |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
}

fn analyzer(c: &mut Criterion) {
    let arch = preset("se-resnet50-r16").unwrap();
    c.bench_function("analyze_se_resnet50", |b| b.iter(|| analyze(black_box(&arch)).unwrap()));
}

criterion_group!(benches, conv, se, network, analyzer);
criterion_main!(benches);
