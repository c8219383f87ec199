//! Sequential vs parallel execution of the batch workloads. Without the
//! `parallel` feature both arms run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rths_core::config::ExperimentConfig;
use rths_core::integrator::run_pure_fe;
use rths_core::par::{self, ExecPolicy};
use rths_core::scenario::{Experiment, Scenario};
use rths_core::surrogate::rnn::{evaluate_hidden_size_sweep, gradient_check, TrainConfig};

const POLICIES: [(&str, ExecPolicy); 2] = [
    ("sequential", ExecPolicy::Sequential),
    ("parallel", ExecPolicy::Parallel),
];

fn experiment(duration: f64) -> Experiment {
    let mut cfg = ExperimentConfig::default();
    cfg.record.duration = duration;
    cfg.rnn.train.epochs = 2;
    Experiment::new(cfg).unwrap()
}

fn pure_fe(c: &mut Criterion) {
    let exp = experiment(40.0);
    c.bench_function("pure_fe_40s", |b| {
        b.iter(|| run_pure_fe(&exp.model, &exp.config.integrator, black_box(&exp.ground_motion)).unwrap())
    });
}

fn matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario_matrix_2s");
    group.sample_size(10);
    let loops: Vec<Scenario> = Scenario::ALL.into_iter().filter(|s| *s != Scenario::RnnSweep).collect();
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            // fresh experiment per iteration so cached artifacts are rebuilt
            b.iter(|| experiment(2.0).run_matrix(&loops, policy))
        });
    }
    group.finish();
}

fn rnn_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("rnn_sweep_1s");
    group.sample_size(10);
    let ds = experiment(1.0).rnn_dataset().unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_hidden_size_sweep(&[5, 10, 20], &ds, &cfg, policy).unwrap())
        });
    }
    group.finish();
}

fn gradient_checks(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient_check_x32");
    let seeds: Vec<u64> = (0..32).collect();
    for (name, policy) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map(&seeds, policy, |&s| {
                    gradient_check(3, 12, s, 1e-6, 1e-4).unwrap().passed
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, pure_fe, matrix, rnn_sweep, gradient_checks);
criterion_main!(benches);
