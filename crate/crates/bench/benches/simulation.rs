use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crem_core::branching::traverse;
use crem_core::oracles::second_moment_abs;
use crem_core::rng::{replica_rng, StreamKind};
use crem_core::{
    field, Complex64, ComplexTemperature, OffspringDistribution, QuadratureSpec, ReplicaPlan, ScaledComplex,
    SpeedFunction, DEFAULT_POPULATION_CAP,
};

fn tree(c: &mut Criterion) {
    let dist = OffspringDistribution::binary();
    let mut g = c.benchmark_group("traverse");
    for t in [6.0, 10.0] {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            let mut i = 0;
            b.iter(|| {
                i += 1;
                let mut rng = replica_rng(1, i, StreamKind::Tree);
                traverse(&dist, t, DEFAULT_POPULATION_CAP, &mut rng, &mut |_| {}).unwrap()
            })
        });
    }
    g.finish();
}

fn replica(c: &mut Criterion) {
    let speed = SpeedFunction::exp_family(3.0).unwrap();
    let mut g = c.benchmark_group("run_replica");
    for n_betas in [1usize, 16] {
        let betas = (0..n_betas)
            .map(|k| ComplexTemperature::new(0.3, 0.1 * k as f64))
            .collect();
        let plan = ReplicaPlan::new(speed.clone(), OffspringDistribution::binary(), 8.0, 0.7)
            .unwrap()
            .with_betas(betas);
        g.bench_with_input(BenchmarkId::new("betas", n_betas), &plan, |b, plan| {
            let mut i = 0;
            b.iter(|| {
                i += 1;
                field::run_replica(plan, 2, i).unwrap()
            })
        });
    }
    g.finish();
}

fn accumulate(c: &mut Criterion) {
    let exps: Vec<Complex64> = (0..4096)
        .map(|k| Complex64::new(0.01 * (k % 977) as f64, 0.37 * k as f64))
        .collect();
    c.bench_function("accumulate_4096", |b| {
        b.iter(|| {
            let mut s = ScaledComplex::default();
            for &e in &exps {
                s.accumulate(black_box(e));
            }
            s.log_abs()
        })
    });
}

fn quadrature(c: &mut Criterion) {
    let speed = SpeedFunction::exp_family(3.0).unwrap();
    let beta = ComplexTemperature::new(0.3, 1.1);
    c.bench_function("second_moment_abs_t40", |b| {
        b.iter(|| second_moment_abs(&speed, beta, 0.7, black_box(40.0), 2.0, QuadratureSpec::default()).unwrap())
    });
}

criterion_group!(benches, tree, replica, accumulate, quadrature);
criterion_main!(benches);
