//! Parallel vs single-worker solve and Monte Carlo evaluation.
//!
//! `cargo bench -p erpomdp` compares a one-thread pool with the default
//! pool; `cargo bench -p erpomdp --no-default-features` measures the
//! sequential build, whose `threads=*` rows then coincide.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use erpomdp::entropy::{build_pwlc, default_base_points, linear_cost_planes};
use erpomdp::harness::{build_gridworld, monte_carlo, GridSpec, Horizon};
use erpomdp::par::with_threads;
use erpomdp::{solve, PomdpModel, SolverConfig};

fn grid() -> PomdpModel {
    let spec = GridSpec::from_json_str(
        r#"{"width": 6, "height": 6, "goal": 35, "false_wall_prob": 0.2, "miss_prob": 0.0,
            "walls": [[12, "S"], [13, "S"], [14, "S"], [15, "S"], [22, "E"], [28, "E"]],
            "discount": 0.95}"#,
    )
    .unwrap();
    build_gridworld(&spec).unwrap()
}

fn config() -> SolverConfig {
    SolverConfig {
        belief_set_size: 150,
        expansion_rounds: 1,
        bellman_residual_tol: 1e-2,
        ..SolverConfig::default()
    }
}

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("threads=1", Some(1)), ("threads=default", None)]
}

fn bench_solve(c: &mut Criterion) {
    let linear = grid().with_weights(1.0, 1.0).unwrap();
    let pwlc = grid().with_weights(1.0, 0.0).unwrap();
    let lin_planes = linear_cost_planes(&linear).unwrap();
    let pwlc_planes = build_pwlc(&pwlc, &default_base_points(pwlc.num_states()).unwrap())
        .unwrap()
        .into_planes();
    let cfg = config();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (label, threads) in pools() {
        g.bench_function(BenchmarkId::new("linear", label), |b| {
            b.iter(|| with_threads(threads, || solve(&linear, &lin_planes, &cfg).unwrap()))
        });
        g.bench_function(BenchmarkId::new("pwlc", label), |b| {
            b.iter(|| with_threads(threads, || solve(&pwlc, &pwlc_planes, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn bench_monte_carlo(c: &mut Criterion) {
    let m = grid().with_weights(1.0, 1.0).unwrap();
    let policy = solve(&m, &linear_cost_planes(&m).unwrap(), &config()).unwrap();
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    for (label, threads) in pools() {
        g.bench_function(BenchmarkId::new("200x50", label), |b| {
            b.iter(|| with_threads(threads, || monte_carlo(&m, &policy, 200, Horizon::Fixed(50), 1).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_solve, bench_monte_carlo);
criterion_main!(benches);
