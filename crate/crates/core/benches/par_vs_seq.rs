use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pwcert::harness::config::ExperimentConfig;
use pwcert::harness::learn::OnlineLearner;
use pwcert::harness::pipeline::start_state;
use pwcert::identify::AffineDynamics;
use pwcert::linalg::{Mat, Vector};
use pwcert::partition::Partition;
use pwcert::uncertainty::bound_all;
use pwcert::verify::{brute_force_max_dv, discretize, miqp_verify, VerifyConfig};
use pwcert::Exec;

const MODES: [(Exec, &str); 2] = [(Exec::Parallel, "parallel"), (Exec::Sequential, "sequential")];

fn toy_system() -> pwcert::verify::DiscretePWA {
    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[3, 3]).unwrap();
    let models: Vec<AffineDynamics> = (0..part.len())
        .map(|s| AffineDynamics {
            a: Mat::from_row_slice(2, 2, &[-0.5, 0.1 * s as f64 / 9.0, -0.2, -0.6]),
            b: Mat::zeros(2, 1),
            c: Vector::from_vec(vec![0.01, -0.01]),
        })
        .collect();
    let gains = vec![(Mat::zeros(1, 2), Vector::zeros(1)); part.len()];
    let bounds = vec![Vector::from_vec(vec![0.01, 0.01]); part.len()];
    discretize(&part, &models, &gains, &bounds, 1.0, part.domain(), 0.1).unwrap()
}

fn verifier(c: &mut Criterion) {
    let sys = toy_system();
    let p = Mat::identity(4, 4) * 0.5;
    let mut g = c.benchmark_group("verify");
    g.sample_size(10);
    for (exec, name) in MODES {
        g.bench_with_input(BenchmarkId::new("grid_oracle", name), &exec, |b, &exec| {
            b.iter(|| brute_force_max_dv(&p, &sys, 101, 3, exec).unwrap())
        });
        let cfg = VerifyConfig { exec, ..VerifyConfig::default() };
        g.bench_with_input(BenchmarkId::new("miqp", name), &cfg, |b, cfg| b.iter(|| miqp_verify(&p, &sys, cfg).unwrap()));
    }
    g.finish();
}

fn bounds(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::pendulum();
    cfg.episodes.count = 20_000;
    let mut learner = OnlineLearner::new(&cfg).unwrap();
    learner.run_schedule(&cfg, &start_state(&cfg), |_| false).unwrap();
    let basis = learner.basis();
    let mut g = c.benchmark_group("uncertainty");
    g.sample_size(10);
    for (exec, name) in MODES {
        g.bench_with_input(BenchmarkId::new("bound_all", name), &exec, |b, &exec| {
            b.iter(|| bound_all(&learner.plant, &learner.partition, &learner.model.pieces, &basis, &learner.db, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, verifier, bounds);
criterion_main!(benches);
