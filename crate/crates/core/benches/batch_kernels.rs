//! Batch kernels on the default rayon pool against a single-thread pool.
//! The single-thread pool runs the same code path as a build without the
//! `parallel` feature.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mtard_core::attacks::{self, AttackConfig};
use mtard_core::entropy_balance::TemperatureState;
use mtard_core::nets::{forward, NetworkParams, NetworkSpec, Role};
use mtard_core::trainer::mtard_objective;
use mtard_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let threads = default.current_num_threads();
    vec![
        ("1-thread".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("default-{threads}"), default),
    ]
}

fn kernels(c: &mut Criterion) {
    let rows = 128;
    let conv = NetworkSpec::conv([3, 16, 16], &[8, 16], 10).unwrap();
    let mlp = NetworkSpec::mlp(64, &[128, 128], 10).unwrap();
    let cases = [("conv", conv, vec![rows, 3, 16, 16]), ("mlp", mlp, vec![rows, 64])];
    let pools = pools();

    for (name, spec, shape) in &cases {
        let student = NetworkParams::init(spec, Role::Student, 1).unwrap();
        let clean = NetworkParams::init(spec, Role::CleanTeacher, 2).unwrap();
        let robust = NetworkParams::init(spec, Role::RobustTeacher, 3).unwrap();
        let x = inputs(shape.clone(), 4);
        let x_adv = inputs(shape.clone(), 5);
        let labels: Vec<usize> = (0..rows).map(|i| i % 10).collect();
        let temps = TemperatureState::default();
        let pgd = AttackConfig { steps: 3, ..AttackConfig::training_pgd() };

        let mut g = c.benchmark_group(format!("{name}-b{rows}"));
        g.sample_size(10);
        for (label, pool) in &pools {
            g.bench_function(BenchmarkId::new("forward", label), |b| {
                pool.install(|| b.iter(|| forward(black_box(&student), black_box(&x)).unwrap()))
            });
            g.bench_function(BenchmarkId::new("objective", label), |b| {
                pool.install(|| {
                    b.iter(|| {
                        mtard_objective(&student, &clean, &robust, black_box(&x), &x_adv, &temps, 0.5, 0.5, false, false)
                            .unwrap()
                    })
                })
            });
            g.bench_function(BenchmarkId::new("pgd3", label), |b| {
                pool.install(|| b.iter(|| attacks::pgd(&student, black_box(&x), &labels, &pgd, 7).unwrap()))
            });
        }
        g.finish();
    }
}

criterion_group!(benches, kernels);
criterion_main!(benches);
