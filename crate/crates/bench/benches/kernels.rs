use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fracevol_core::evolution::LinearModel;
use fracevol_core::fbm;
use fracevol_core::fraccalc::{self, StepFunction};
use fracevol_core::grid::TimeGrid;
use fracevol_core::hurst::Hurst;
use fracevol_core::solver::{self, ForcingTerm};
use nalgebra::DVector;
use std::hint::black_box;

fn bench_samplers(c: &mut Criterion) {
    let h = Hurst::new(0.75).unwrap();
    let mut group = c.benchmark_group("samplers");
    for steps in [64usize, 256] {
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        group.bench_with_input(BenchmarkId::new("dense", steps), &grid, |b, grid| {
            b.iter(|| black_box(fbm::sample_dense(h, grid, 64, 7).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("circulant", steps), &grid, |b, grid| {
            b.iter(|| black_box(fbm::sample_circulant(h, grid, 64, 7).unwrap()))
        });
    }
    group.finish();
}

fn bench_inner_products(c: &mut Criterion) {
    let h = Hurst::new(0.75).unwrap();
    let phi = StepFunction::indicator(0.0, 1.0).unwrap();
    let psi = StepFunction::indicator(0.25, 0.75).unwrap();
    c.bench_function("inner_product_closed", |b| {
        b.iter(|| black_box(fraccalc::inner_product_closed(&phi, &psi, h)))
    });
    c.bench_function("inner_product_via_kernel_1024", |b| {
        b.iter(|| {
            black_box(fraccalc::inner_product_via_kernel(&phi, &psi, h, 1024, None).unwrap())
        })
    });
    c.bench_function("kernel_value", |b| {
        b.iter(|| black_box(fraccalc::kernel_indicator_value(h, 1.0, black_box(0.37))))
    });
}

fn bench_affine_mild(c: &mut Criterion) {
    let h = Hurst::new(0.7).unwrap();
    let grid = TimeGrid::uniform(1.0, 512).unwrap();
    let ens = fbm::sample_circulant(h, &grid, 1, 3).unwrap();
    let model = LinearModel::scalar(-1.0, 0.5);
    let forcing = ForcingTerm::constant(DVector::from_element(1, 1.0));
    let x0 = DVector::from_element(1, 1.0);
    c.bench_function("affine_mild_512", |b| {
        b.iter(|| {
            black_box(
                solver::solve_affine_mild(&model, h, ens.path(0), &forcing, &x0, None).unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_samplers, bench_inner_products, bench_affine_mild);
criterion_main!(benches);
