//! Criterion benchmarks for the hot kernels: sampling, spectral
//! extraction (full SVD vs the iterative fast path), the singular value
//! lower-bound certificate, and the CLCD grid scan.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use combilab_core::geometry::{clcd_estimate, ClcdParams};
use combilab_core::sampler::{sample_matrix, SeedSpec};
use combilab_core::spectral::{spectrum, witness_certificate};

fn seeds() -> SeedSpec {
    SeedSpec::for_experiment(17, "bench")
}

fn bench_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_matrix");
    for &n in &[128usize, 512, 2048] {
        let d = n / 2;
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let s = seeds();
            let mut trial = 0u64;
            b.iter(|| {
                trial += 1;
                black_box(sample_matrix(n, n, d, &s, trial).unwrap())
            });
        });
    }
    g.finish();
}

fn bench_spectrum(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectrum");
    g.sample_size(10);
    for &n in &[128usize, 256, 512] {
        let mat = sample_matrix(n, n, n / 2, &seeds(), 1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &mat, |b, mat| {
            b.iter(|| black_box(spectrum(mat).unwrap()))
        });
    }
    g.finish();
}

fn bench_certificate(c: &mut Criterion) {
    let mut g = c.benchmark_group("witness_certificate");
    g.sample_size(10);
    for &n in &[128usize, 256] {
        let mat = sample_matrix(n, n, n / 2, &seeds(), 2).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &mat, |b, mat| {
            b.iter(|| black_box(witness_certificate(mat).unwrap()))
        });
    }
    g.finish();
}

fn bench_clcd(c: &mut Criterion) {
    let mut g = c.benchmark_group("clcd_scan");
    for &n in &[64usize, 256] {
        let norm = (n as f64 * (n as f64 + 1.0) * (2.0 * n as f64 + 1.0) / 6.0).sqrt();
        let v: Vec<f64> = (1..=n).map(|i| i as f64 / norm).collect();
        let theta_max = 4.0 * (n as f64).sqrt();
        let params =
            ClcdParams::new(1e-4, 0.1 * n as f64, theta_max, 1e-3 * theta_max).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| black_box(clcd_estimate(v, &params).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(
    kernels,
    bench_sampling,
    bench_spectrum,
    bench_certificate,
    bench_clcd
);
criterion_main!(kernels);
