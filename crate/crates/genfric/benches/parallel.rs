//! Sequential vs parallel comparison for the data-parallel hot spots:
//! the tensor quadrature of the support function, batches of dual solves,
//! and the ε-sweep rungs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use genfric::control::{ControlLaw, Smoother, StagePolicy};
use genfric::dual::{solve_dual, DualConfig};
use genfric::exec::Exec;
use genfric::model::{OscillatorSystem, State};
use genfric::sim::{epsilon_sweep, SimConfig};
use genfric::support::{h_eval_with, QuadratureSpec, Scheme};

fn modes() -> [(&'static str, Exec); 2] {
    [("seq", Exec::Sequential), ("par", Exec::Parallel)]
}

fn bench_h_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("h_eval");
    for (dim, nodes) in [(4usize, 64usize), (5, 32)] {
        let q = QuadratureSpec::new(nodes, Scheme::ChebyshevGauss).unwrap();
        let z: Vec<f64> = (0..dim).map(|i| 0.5 + 0.3 * i as f64).collect();
        for (name, exec) in modes() {
            group.bench_with_input(
                BenchmarkId::new(format!("n{dim}x{nodes}"), name),
                &exec,
                |b, &exec| b.iter(|| h_eval_with(&z, &q, exec).unwrap().value),
            );
        }
    }
    group.finish();
}

fn bench_dual_batch(c: &mut Criterion) {
    let sys = OscillatorSystem::new(vec![1.0, std::f64::consts::SQRT_2, 2.3]).unwrap();
    let states: Vec<State> = (0..24)
        .map(|k| {
            let a = 0.4 + 0.07 * k as f64;
            State::new(vec![a, -0.8 + 0.05 * k as f64, 0.9, 0.3 * a, -0.5, 1.1]).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("dual_batch");
    group.sample_size(20);
    group.bench_function("seq", |b| {
        let cfg = DualConfig {
            exec: Exec::Sequential,
            ..DualConfig::default()
        };
        b.iter(|| {
            states
                .iter()
                .map(|s| solve_dual(&sys, s, &cfg).unwrap().rho)
                .sum::<f64>()
        })
    });
    group.bench_function("par", |b| {
        use rayon::prelude::*;
        let cfg = DualConfig {
            exec: Exec::Sequential,
            ..DualConfig::default()
        };
        b.iter(|| {
            states
                .par_iter()
                .map(|s| solve_dual(&sys, s, &cfg).unwrap().rho)
                .sum::<f64>()
        })
    });
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let sys = OscillatorSystem::new(vec![1.0]).unwrap();
    let s0 = State::new(vec![0.0, 2.0]).unwrap();
    let law = ControlLaw::new(1e-2, Smoother::Saturation, 1.0).unwrap();
    let stages = StagePolicy::new(0.5, 0.05, 0.5).unwrap();
    let base = SimConfig::new(4.0, law, stages).unwrap();
    let ladder = [1e-1, 3e-2, 1e-2];
    let mut group = c.benchmark_group("epsilon_sweep");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            let mut cfg = base.clone();
            cfg.exec = exec;
            b.iter(|| epsilon_sweep(&sys, &s0, &cfg, &ladder, 1e-6).unwrap().distances)
        });
    }
    group.finish();
}

criterion_group!(benches, bench_h_eval, bench_dual_batch, bench_sweep);
criterion_main!(benches);
