use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wsod_bench::fixture;
use wsod_core::cam::{multi_inference_cam, CamConfig};
use wsod_core::metrics::{evaluate, ThresholdPolicy};
use wsod_core::nets::{init_classifier, ArchConfig};
use wsod_core::refine::{crf_refine, pamr_refine, slic, CrfParams, PamrParams, SlicParams};
use wsod_core::BinaryMask;

fn refinements(c: &mut Criterion) {
    let mut group = c.benchmark_group("refine");
    group.sample_size(10);
    for size in [32, 64] {
        let (img, map) = fixture(size);
        group.bench_with_input(BenchmarkId::new("pamr", size), &size, |b, _| {
            b.iter(|| pamr_refine(black_box(&img), black_box(&map), &PamrParams::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("slic", size), &size, |b, _| {
            b.iter(|| slic(black_box(&img), &SlicParams::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("crf", size), &size, |b, _| {
            b.iter(|| crf_refine(black_box(&img), black_box(&map), &CrfParams::default()).unwrap())
        });
    }
    group.finish();
}

fn cam(c: &mut Criterion) {
    let (img, _) = fixture(64);
    let params = init_classifier(&ArchConfig::default(), 4, 1).unwrap();
    let cfg = CamConfig::default();
    c.bench_function("multi_inference_cam/64", |b| b.iter(|| multi_inference_cam(&params, black_box(&img), &cfg).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let (_, map) = fixture(64);
    let gt = BinaryMask::from_fn(64, 64, |y, x| map.get(y, x) > 0.4);
    let (preds, gts) = (vec![map; 8], vec![gt; 8]);
    c.bench_function("metrics/8x64", |b| b.iter(|| evaluate(black_box(&preds), &gts, ThresholdPolicy::Adaptive).unwrap()));
}

criterion_group!(benches, refinements, cam, metrics);
criterion_main!(benches);
