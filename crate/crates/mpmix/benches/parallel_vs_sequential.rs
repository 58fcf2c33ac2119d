//! Compares the data-parallel search path against the sequential
//! fallback on a representative model search.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpmix::bic::{search_bic, SearchConfig};
use mpmix::data::DataSet;
use mpmix::dist::default_priors;
use mpmix::em::{fit_em, EmConfig};
use mpmix::micl::{optimize_micl, MiclConfig};
use mpmix::sim::{sample_scenario, Difficulty, SimScenario};

fn scenario_data(n: usize) -> DataSet {
    let scenario = SimScenario::new(Difficulty::Easy, n, 0.0, 1).unwrap();
    sample_scenario(&scenario, 17).unwrap().data
}

fn bench_em(c: &mut Criterion) {
    let data = scenario_data(200);
    let spec = mpmix::data::ModelSpec::new(vec![2, 2, 1], vec![0, 0, 1, 1, 2, 2]);
    let mut group = c.benchmark_group("fit_em_restarts");
    for &parallel in &[false, true] {
        group.bench_with_input(
            BenchmarkId::from_parameter(if parallel { "parallel" } else { "sequential" }),
            &parallel,
            |bench, &parallel| {
                let cfg = EmConfig { restarts: 20, seed: 1, parallel, ..Default::default() };
                bench.iter(|| fit_em(&data, &spec, &cfg).unwrap());
            },
        );
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let data = scenario_data(100);
    let mut group = c.benchmark_group("search_bic");
    group.sample_size(10);
    for &parallel in &[false, true] {
        group.bench_with_input(
            BenchmarkId::from_parameter(if parallel { "parallel" } else { "sequential" }),
            &parallel,
            |bench, &parallel| {
                let cfg = SearchConfig {
                    b_max: 2,
                    g_max: 2,
                    restarts: 5,
                    seed: 1,
                    parallel,
                    ..Default::default()
                };
                bench.iter(|| search_bic(&data, &cfg).unwrap());
            },
        );
    }
    group.finish();
}

fn bench_micl(c: &mut Criterion) {
    let data = scenario_data(100);
    let prior = default_priors(&data);
    let mut group = c.benchmark_group("optimize_micl");
    group.sample_size(10);
    for &parallel in &[false, true] {
        group.bench_with_input(
            BenchmarkId::from_parameter(if parallel { "parallel" } else { "sequential" }),
            &parallel,
            |bench, &parallel| {
                let cfg = MiclConfig { restarts: 10, seed: 1, parallel, ..Default::default() };
                bench.iter(|| optimize_micl(&data, &[2, 2, 1], &prior, &cfg).unwrap());
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_em, bench_search, bench_micl);
criterion_main!(benches);
