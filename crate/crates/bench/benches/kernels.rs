use std::hint::black_box;

use biotrom::pod::{nested_pod, standard_pod};
use biotrom::Mlp;
use criterion::{criterion_group, criterion_main, Criterion};

fn pod(c: &mut Criterion) {
    let [_, p] = biotrom_bench::snapshots(10, 9).expect("snapshot batch");
    let mut g = c.benchmark_group("pod_pressure_m9");
    g.sample_size(10);
    g.bench_function("standard", |b| b.iter(|| standard_pod(black_box(&p), 20).unwrap()));
    for n_int in [5, 10, 20] {
        g.bench_function(format!("nested_n_int_{n_int}"), |b| b.iter(|| nested_pod(black_box(&p), n_int, 20).unwrap()));
    }
    g.finish();
}

fn fom_step(c: &mut Criterion) {
    let setup = biotrom_bench::setup(20, 25).expect("setup");
    let problem = setup.case.problem(&[0.25, 1e-13]).expect("problem");
    let init = problem.undrained_initialize().expect("initial state");
    let mut g = c.benchmark_group("fom");
    g.sample_size(10);
    g.bench_function("fixed_stress_step_n20", |b| b.iter(|| problem.fixed_stress_step(black_box(&init), 20.0).unwrap()));
    g.finish();
}

fn mlp_forward(c: &mut Criterion) {
    let net = Mlp::new(3, 7, 3, 5, 0).unwrap();
    let x = [0.3, 0.5, 0.7];
    c.bench_function("mlp_forward_3x7", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
}

criterion_group!(benches, pod, fom_step, mlp_forward);
criterion_main!(benches);
