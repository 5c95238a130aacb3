use std::hint::black_box;

use condexp::experiments::{generate_curve_dataset, CurveSpec};
use condexp::{assemble_problem, fit, select_centers, svd, CenterSelection, FitParams, Point};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn assemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    group.sample_size(10);
    for n in [1000, 4000] {
        let data = generate_curve_dataset(&CurveSpec::new(n, 1).unwrap()).unwrap();
        let params = FitParams::new(0.004, 200).unwrap();
        let centers = select_centers(data.xs(), 200, CenterSelection::Stride).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| {
                assemble_problem(
                    data,
                    &centers,
                    &params.kernel,
                    params.delta,
                    params.markov_bw,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let data = generate_curve_dataset(&CurveSpec::new(4000, 1).unwrap()).unwrap();
    let params = FitParams::new(0.004, 200).unwrap();
    let centers = select_centers(data.xs(), 200, CenterSelection::Stride).unwrap();
    let problem = assemble_problem(
        &data,
        &centers,
        &params.kernel,
        params.delta,
        params.markov_bw,
    )
    .unwrap();
    let mut group = c.benchmark_group("svd");
    group.sample_size(10);
    group.bench_function("4000x200", |b| {
        b.iter(|| svd(black_box(problem.lhs.entries())).unwrap())
    });
    group.finish();
}

fn fit_and_evaluate(c: &mut Criterion) {
    let data = generate_curve_dataset(&CurveSpec::new(4000, 1).unwrap()).unwrap();
    let params = FitParams::new(0.004, 200).unwrap();
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("curve 4000", |b| {
        b.iter(|| fit(black_box(&data), &params).unwrap())
    });
    group.finish();

    let (model, _) = fit(&data, &params).unwrap();
    let query: Vec<Point> = (0..10_000)
        .map(|i| Point::scalar(i as f64 / 9_999.0))
        .collect();
    c.bench_function("evaluate 10000", |b| {
        b.iter(|| model.evaluate(black_box(&query)).unwrap())
    });
}

criterion_group!(benches, assemble, solve, fit_and_evaluate);
criterion_main!(benches);
