use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gwe_core::dataset::stratified_folds;
use gwe_core::ensemble::out_of_fold;
use gwe_core::learners::{ClassifierSpec, FitOptions, ModelKind};
use gwe_core::outlier::{BcpHiConfig, OutlierModel};
use gwe_core::{par, rng, Matrix};
use rand::Rng;

fn data(n: usize, d: usize) -> (Matrix, Vec<u8>) {
    let mut r = rng::seeded(11);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| r.random::<f64>() + 0.01 * (i * (j + 1)) as f64)
                .collect()
        })
        .collect();
    let y = rows
        .iter()
        .map(|row| u8::from(row[0] - row[1] + 0.5 * r.random::<f64>() > 0.2))
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn bench_out_of_fold(c: &mut Criterion) {
    let (x, y) = data(1200, 8);
    let specs: Vec<ClassifierSpec> = ModelKind::ALL.iter().map(|&k| ClassifierSpec::reference(k)).collect();
    let held = stratified_folds(&y, 5, 3).unwrap();
    let options = FitOptions::default();
    let run = || out_of_fold(&specs, &x, &y, &held, 3, &options).unwrap();
    let mut g = c.benchmark_group("out_of_fold");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| par::with_threads(1, || black_box(run()))));
    g.bench_function("parallel", |b| b.iter(|| black_box(run())));
    g.finish();
}

fn bench_outliers(c: &mut Criterion) {
    let (x, _) = data(4000, 12);
    let columns: Vec<(usize, String)> = (0..12).map(|j| (j, format!("c{j}"))).collect();
    let cfg = BcpHiConfig::default();
    let run = || OutlierModel::fit(&x, &columns, &cfg).unwrap();
    let mut g = c.benchmark_group("outlier_fit");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| par::with_threads(1, || black_box(run()))));
    g.bench_function("parallel", |b| b.iter(|| black_box(run())));
    g.finish();
}

criterion_group!(benches, bench_out_of_fold, bench_outliers);
criterion_main!(benches);
