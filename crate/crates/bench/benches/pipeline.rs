use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pkcl_core::bridge::{default_hyper, fit_h};
use pkcl_core::kernel::{gram_matrix, median_heuristic, KernelSpec};
use pkcl_core::policy::{fit_kde_policy, BandwidthGrid, PolicyModel};
use pkcl_core::scenario::{generate, ScenarioFamily, ScenarioSpec};

fn lowdim_data(n: usize) -> pkcl_core::data::Dataset {
    let spec = ScenarioSpec { family: ScenarioFamily::LowDim { scenario: 1 }, n, seed: 17 };
    generate(&spec).unwrap().observed
}

fn bench_gram(c: &mut Criterion) {
    let data = lowdim_data(500);
    let rows = data.rows_awx();
    let spec = KernelSpec::gaussian(median_heuristic(&rows, 1000, 0).unwrap()).unwrap();
    c.bench_function("gram_matrix_500", |b| {
        b.iter(|| gram_matrix(&rows, &rows, &spec).unwrap())
    });
}

fn bench_fit_h(c: &mut Criterion) {
    let data = lowdim_data(200);
    let hyper = default_hyper(data.n(), 1.0);
    c.bench_function("fit_h_200", |b| {
        b.iter_batched(|| data.clone(), |d| fit_h(&d, &hyper, 0).unwrap(), BatchSize::SmallInput)
    });
}

fn bench_kde_density(c: &mut Criterion) {
    let data = lowdim_data(300);
    let model = PolicyModel::Kde(fit_kde_policy(&data, &BandwidthGrid::default(), 0).unwrap());
    c.bench_function("kde_density_300", |b| {
        b.iter(|| model.density_at(0.5, &data.w[0], &data.x[0]).unwrap())
    });
}

criterion_group!(benches, bench_gram, bench_fit_h, bench_kde_density);
criterion_main!(benches);
