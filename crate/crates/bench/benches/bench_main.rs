use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ingarch::estimation::{fit, loglik, FitConfig, ModelKind};
use ingarch::nb::NbParams;
use ingarch::verify::{gap_checks, simulate_paths, LiftedModel};
use ingarch::RngStream;
use ingarch_bench::fixture;

fn likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("loglik");
    for model in [ModelKind::Nb, ModelKind::Poisson] {
        for n in [500, 2000] {
            let f = fixture(model, n, 6).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{model:?}"), n), &f, |b, f| {
                b.iter(|| loglik(black_box(&f.truth), &f.panel, f.model, f.policy).unwrap())
            });
        }
    }
    group.finish();
}

fn estimation(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    let f = fixture(ModelKind::Nb, 2000, 6).unwrap();
    let config = FitConfig { starts: 1, ..FitConfig::default() };
    group.bench_function("nb_2000x6", |b| b.iter(|| fit(&f.panel, f.model, f.policy, &config).unwrap()));
    group.finish();
}

fn lifted(c: &mut Criterion) {
    let model =
        LiftedModel::Nb(NbParams::new(1.5, vec![0.8; 6], vec![0.8, 1.5, 0.6, 2.0, 1.2, 0.9], vec![true; 6]).unwrap());
    let stream = RngStream::root(7);
    let mut group = c.benchmark_group("lifted");
    group.sample_size(20);
    group.bench_function("simulate_paths_nb_1e4", |b| {
        b.iter(|| simulate_paths(&model, 10_000, stream.split_str("paths")).unwrap())
    });
    group.bench_function("gap_checks_nb", |b| b.iter(|| gap_checks(&model, stream.split_str("gap")).unwrap()));
    group.finish();
}

criterion_group!(benches, likelihood, estimation, lifted);
criterion_main!(benches);
