//! Sequential vs rayon execution of the grid-heavy kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stokeslab::corpus::Corpus;
use stokeslab::exec::{with_mode, ExecMode};
use stokeslab::semigroup::{heat_apply, leray_project};
use stokeslab::weights::{default_radius_ladder, maximal_function, RadialWeight};
use stokeslab::{integrate, Grid};

fn modes(c: &mut Criterion) {
    let grid = Grid::new(3, 32, 8.0).unwrap();
    let mut corpus = Corpus::new(3, 3);
    let v = corpus.vector(&grid);
    let s = corpus.scalar().sample(&grid);
    let weight = RadialWeight::bracket(1.0).unwrap();
    let radii = default_radius_ladder(&grid);

    let mut group = c.benchmark_group("exec_mode");
    group.sample_size(10);
    for (label, mode) in [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)] {
        group.bench_with_input(BenchmarkId::new("leray_project", label), &mode, |b, &m| {
            b.iter(|| with_mode(m, || leray_project(&v).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("heat_apply", label), &mode, |b, &m| {
            b.iter(|| with_mode(m, || heat_apply(&v, 1.0).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("weighted_norm", label), &mode, |b, &m| {
            b.iter(|| with_mode(m, || integrate(&v, 3.0, Some(&weight)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("maximal_function", label), &mode, |b, &m| {
            b.iter(|| with_mode(m, || maximal_function(&s, &radii).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, modes);
criterion_main!(benches);
