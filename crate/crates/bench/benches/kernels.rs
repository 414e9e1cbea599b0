use criterion::{black_box, criterion_group, criterion_main, Criterion};
use millforge_bench::*;

fn level_set(c: &mut Criterion) {
    let distorted = distorted_sphere();
    c.bench_function("redistance 65^3", |b| b.iter(|| black_box(distorted.redistance().unwrap())));
    let ls = sphere_level_set();
    let rays = rays(1000);
    c.bench_function("raycast x1000", |b| b.iter(|| black_box(cast_all(&ls, &rays, 1.0))));
}

fn milling(c: &mut Criterion) {
    let w = hook_workload();
    let mut g = c.benchmark_group("hook");
    g.sample_size(10);
    g.bench_function("hemisphere filter", |b| b.iter(|| black_box(hemisphere_filter(&w))));
    g.bench_function("heat solve", |b| b.iter(|| black_box(heat_on_hook(&w))));
    g.finish();
}

fn fem(c: &mut Criterion) {
    let (disc, mat, case) = cantilever();
    let mut g = c.benchmark_group("fem");
    g.sample_size(10);
    g.bench_function("cantilever 64x8x8", |b| b.iter(|| black_box(solve_cantilever(&disc, &mat, &case))));
    g.finish();
}

criterion_group!(benches, level_set, milling, fem);
criterion_main!(benches);
