//! Replication throughput on a one-worker pool against the default pool.
//!
//! Build with `--no-default-features` to time the plain sequential code
//! path; there the two groups coincide.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vmstat::covariance::CovarianceModel;
use vmstat::empirical::simulate_v_statistics;
use vmstat::kernels::{discretize, seminorm_sq, AnalyticKernel};
use vmstat::limitlaw::GaussianGrid;
use vmstat::mixing::MarkovUniformGenerator;

/// A named pool to time inside. Without the `parallel` feature there is a
/// single sequential runner.
struct Runner {
    label: &'static str,
    #[cfg(feature = "parallel")]
    pool: rayon::ThreadPool,
}

impl Runner {
    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        #[cfg(feature = "parallel")]
        {
            self.pool.install(f)
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }
}

#[cfg(feature = "parallel")]
fn runners() -> Vec<Runner> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![Runner { label: "1-thread", pool: one }, Runner { label: "default", pool: all }]
}

#[cfg(not(feature = "parallel"))]
fn runners() -> Vec<Runner> {
    vec![Runner { label: "sequential" }]
}

fn v_statistics(c: &mut Criterion) {
    let generator = MarkovUniformGenerator::two_state(0.7, 1).unwrap();
    let kernel = discretize(&AnalyticKernel::cramer_von_mises(), 128).unwrap();
    let mut group = c.benchmark_group("v_statistic_replications");
    group.sample_size(10);
    for r in runners() {
        group.bench_with_input(BenchmarkId::new(r.label, "n=1000,reps=500"), &r, |b, r| {
            b.iter(|| r.run(|| simulate_v_statistics(&generator, &kernel, 1000, 500).unwrap()))
        });
    }
    group.finish();
}

fn msi(c: &mut Criterion) {
    let grid = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 128).unwrap();
    let kernel = discretize(&AnalyticKernel::cramer_von_mises(), 128).unwrap();
    let mut group = c.benchmark_group("msi_replications");
    group.sample_size(10);
    for r in runners() {
        group.bench_with_input(BenchmarkId::new(r.label, "N=128,reps=500"), &r, |b, r| {
            b.iter(|| r.run(|| grid.sample_msi(&kernel, 500, 3).unwrap()))
        });
    }
    group.finish();
}

fn seminorm(c: &mut Criterion) {
    let kernel = discretize(&AnalyticKernel::cramer_von_mises(), 24).unwrap();
    let model = CovarianceModel::stationary_ou(1.0).unwrap();
    let mut group = c.benchmark_group("seminorm_d2");
    group.sample_size(10);
    for r in runners() {
        group.bench_with_input(BenchmarkId::new(r.label, "N=24"), &r, |b, r| {
            b.iter(|| r.run(|| seminorm_sq(&kernel, &model).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, v_statistics, msi, seminorm);
criterion_main!(benches);
