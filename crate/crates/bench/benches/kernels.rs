use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use siite::exact::{siite_step_sparse, ExactSolver, SparseOperator, StateVector};
use siite::models::{build_heisenberg, product_decomposition, shift_operator};
use siite::mps::{siite_sweep, variance_mps, Mpo, Mps, SweepOptions};
use siite::shots::{sample_overlap, OverlapTask};

fn exact_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_step");
    group.sample_size(10);
    for l in [8usize, 10, 12] {
        let (_, h) = build_heisenberg(l, 1.0, 4.0, 1).unwrap();
        let op = SparseOperator::new(&shift_operator(&h, 0.0));
        let psi = StateVector::random(l, 2);
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| siite_step_sparse(&op, black_box(&psi), 0.05, ExactSolver::LeastSquares).unwrap())
        });
    }
    group.finish();
}

fn mps_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("mps_sweep");
    group.sample_size(10);
    let (_, h) = build_heisenberg(16, 1.0, 4.0, 1).unwrap();
    let mpo = Mpo::from_terms(&shift_operator(&h, 0.0));
    for chi in [4usize, 8, 16] {
        let m = Mps::random(16, chi, 3);
        group.bench_with_input(BenchmarkId::from_parameter(chi), &chi, |b, _| {
            b.iter(|| siite_sweep(black_box(&m), &mpo, 0.05, &SweepOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn mps_variance(c: &mut Criterion) {
    let (_, h) = build_heisenberg(32, 1.0, 4.0, 1).unwrap();
    let mpo = Mpo::from_terms(&h);
    let m = Mps::random(32, 16, 3);
    c.bench_function("variance_mps_L32_chi16", |b| {
        b.iter(|| variance_mps(black_box(&m), &mpo, 0.0).unwrap())
    });
}

fn decomposition(c: &mut Criterion) {
    let (_, h) = build_heisenberg(10, 1.0, 4.0, 1).unwrap();
    let hs = shift_operator(&h, 0.1);
    c.bench_function("product_decomposition_L10", |b| {
        b.iter(|| product_decomposition(black_box(&hs), 0.05).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let task = OverlapTask::new(StateVector::random(6, 1), StateVector::random(6, 2)).unwrap();
    c.bench_function("hadamard_1e5_shots", |b| {
        b.iter(|| sample_overlap(black_box(&task), 100_000, 7).unwrap())
    });
}

criterion_group!(benches, exact_step, mps_sweep, mps_variance, decomposition, sampling);
criterion_main!(benches);
