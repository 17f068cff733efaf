use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use minstab_core::landscape::{loss_gradient, spectrum_report};
use minstab_core::relu_net::{extract_knots, init_params};
use minstab_core::trainer::gd_step;
use minstab_core::{gen_hat_dataset, EigenMethod, EmpiricalWeight, InitScheme};

fn gradient_step(c: &mut Criterion) {
    let data = gen_hat_dataset(30, 0.5, 1001, 0.5).unwrap();
    let mut group = c.benchmark_group("gd_step");
    for k in [100, 400, 1600] {
        let params = init_params(k, InitScheme::default(), 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &params, |b, p| {
            b.iter(|| gd_step(black_box(p), &data, 0.1).unwrap())
        });
    }
    group.finish();
    let params = init_params(100, InitScheme::default(), 1).unwrap();
    c.bench_function("loss_gradient/k=100", |b| {
        b.iter(|| loss_gradient(black_box(&params), &data))
    });
}

fn spectra(c: &mut Criterion) {
    let data = gen_hat_dataset(30, 0.5, 1001, 0.5).unwrap();
    let params = init_params(100, InitScheme::default(), 1).unwrap();
    let mut group = c.benchmark_group("spectrum_report/k=100");
    group.sample_size(20);
    for method in [EigenMethod::Dense, EigenMethod::Power, EigenMethod::Lanczos] {
        group.bench_function(format!("{method:?}"), |b| {
            b.iter(|| spectrum_report(black_box(&params), &data, method, 1e-8).unwrap())
        });
    }
    group.finish();
}

fn splines(c: &mut Criterion) {
    let data = gen_hat_dataset(1024, 0.5, 1001, 0.5).unwrap();
    let weight = EmpiricalWeight::from_data(&data);
    let params = init_params(1000, InitScheme::default(), 1).unwrap();
    c.bench_function("weighted_tv/k=1000,n=1024", |b| {
        b.iter(|| minstab_core::funcspace::weighted_tv(&extract_knots(black_box(&params)), &weight))
    });
}

criterion_group!(benches, gradient_step, spectra, splines);
criterion_main!(benches);
