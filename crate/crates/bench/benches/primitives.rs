use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cryda_bench::{cry_clip, score_set, tensor};
use cryda_core::dsp::{estimate_pitch, log_mel, FeatureConfig, PitchConfig};
use cryda_core::evaldiag::auc;
use cryda_core::Graph;

fn conv2d(c: &mut Criterion) {
    let (x, k) = (tensor(&[32, 8, 48, 32]), tensor(&[16, 8, 3, 3]));
    c.bench_function("conv2d forward+backward 32x8x48x32 -> 16", |b| {
        b.iter(|| {
            let mut g = Graph::<f32>::new();
            let (xv, kv) = (g.param(x.clone()), g.param(k.clone()));
            let y = g.conv2d(xv, kv, 1, 1).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
            black_box(g.grad(kv).unwrap()[0])
        })
    });
}

fn features(c: &mut Criterion) {
    let clip = cry_clip();
    let cfg = FeatureConfig::default();
    c.bench_function("log_mel 3 s clip", |b| b.iter(|| log_mel(black_box(&clip), &cfg).unwrap()));
    let pitch = PitchConfig::default();
    c.bench_function("yin pitch 3 s clip", |b| b.iter(|| estimate_pitch(black_box(&clip), &pitch).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let (s, l) = score_set(10_000);
    c.bench_function("auc 10k scores", |b| b.iter(|| auc(black_box(&s), &l).unwrap()));
}

criterion_group!(benches, conv2d, features, metrics);
criterion_main!(benches);
