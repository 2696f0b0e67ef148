//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p erpomdp --test acceptance`.

mod common;

use std::time::Instant;

use common::{path_probability, random_model_file, sequences, Dims};
use erpomdp::entropy::{
    build_pwlc, default_base_points, evenly_spaced_two_state, grad_g, linear_cost_planes, sample_simplex,
    stage_cost_g,
};
use erpomdp::estimation::{identity_residuals, viterbi_map, TablePolicy};
use erpomdp::harness::{build_gridworld, geometric_discount_check, simulate_episodes, CriteriaReport, GridSpec, Horizon};
use erpomdp::{solve, AlphaPolicy, Belief, ModelFile, PomdpModel, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are reported but expected to fail; see the decisions ledger.
const KNOWN_GAPS: &[&str] = &["6f"];

/// Seeds fixed before any acceptance run.
const GRID_SOLVER_SEED: u64 = 0;
const GRID_MC_SEED: u64 = 2026;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, id: &'static str, pass: bool, detail: String) {
    println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass, detail });
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let d = Dims { nx: 2, nu: 2, ny: 2 };
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let m = PomdpModel::from_file(random_model_file(&mut rng, &d, case % 3 == 0, 0.9, 1.0, 1.0)).unwrap();
        let policy = TablePolicy::random(&m, 2, case >= 100, &mut rng);
        let (bf, _, r) = identity_residuals(&m, &policy, 2).unwrap();
        worst = worst.max(r.max_abs());
        if case >= 100 {
            worst = worst.max(bf.causal_control.abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "1",
        worst <= 1e-9 && secs <= 60.0,
        format!("identity residual max {worst:.2e} (<= 1e-9) over 200 models, {secs:.1}s"),
    );
}

fn random_weighted_model(rng: &mut ChaCha8Rng) -> PomdpModel {
    const W: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
    let d = Dims {
        nx: rng.random_range(2..=4),
        nu: rng.random_range(1..=3),
        ny: rng.random_range(2..=4),
    };
    let (beta, lambda) = (W[rng.random_range(0..4)], W[rng.random_range(0..4)]);
    let sparse = rng.random::<bool>();
    PomdpModel::from_file(random_model_file(rng, &d, sparse, 0.9, beta, lambda)).unwrap()
}

fn criterion_2(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let m = random_weighted_model(&mut rng);
        let n = m.num_states();
        let (p1, p2) = (sample_simplex(n, &mut rng), sample_simplex(n, &mut rng));
        let mid = Belief::from_weights(p1.iter().zip(p2.iter()).map(|(a, b)| 0.5 * (a + b)).collect()).unwrap();
        let u = rng.random_range(0..m.num_actions());
        let slack = stage_cost_g(&m, &mid, u) - 0.5 * (stage_cost_g(&m, &p1, u) + stage_cost_g(&m, &p2, u));
        worst = worst.min(slack);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "2",
        worst >= -1e-9 && secs <= 60.0,
        format!("min midpoint slack {worst:.2e} (>= -1e-9) over 1e4 tests, {secs:.1}s"),
    );
}

fn max_gap_two_state(m: &PomdpModel, base: &[Belief], grid: usize) -> f64 {
    let approx = build_pwlc(m, base).unwrap();
    let mut gap: f64 = 0.0;
    for i in 1..=grid {
        let t = i as f64 / (grid + 1) as f64;
        let b = Belief::new(vec![t, 1.0 - t]).unwrap();
        for u in 0..m.num_actions() {
            gap = gap.max(approx.evaluate(&b, u) - stage_cost_g(m, &b, u));
        }
    }
    gap
}

fn criterion_3(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);

    let mut bound_slack = f64::INFINITY;
    let mut tested = 0;
    while tested < 10_000 {
        let m = random_weighted_model(&mut rng);
        let approx = build_pwlc(&m, &default_base_points(m.num_states()).unwrap()).unwrap();
        for _ in 0..100 {
            let b = sample_simplex(m.num_states(), &mut rng);
            for u in 0..m.num_actions() {
                bound_slack = bound_slack.min(approx.evaluate(&b, u) - stage_cost_g(&m, &b, u));
            }
            tested += 1;
        }
    }
    let bound_ok = bound_slack >= -1e-9;

    let mut grad_err: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_weighted_model(&mut rng);
        let n = m.num_states();
        let raw = sample_simplex(n, &mut rng);
        let b = Belief::new(raw.iter().map(|p| 0.9 * p + 0.1 / n as f64).collect()).unwrap();
        let u = rng.random_range(0..m.num_actions());
        let g = grad_g(&m, &b, u).unwrap();
        let mean = g.iter().sum::<f64>() / n as f64;
        let h = 1e-5;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for i in 0..n {
            let step = |s: f64| {
                Belief::new((0..n).map(|j| b[j] + s * ((i == j) as u8 as f64 - 1.0 / n as f64)).collect()).unwrap()
            };
            let fd = (stage_cost_g(&m, &step(h), u) - stage_cost_g(&m, &step(-h), u)) / (2.0 * h);
            err = err.max((g[i] - mean - fd).abs());
            scale = scale.max((g[i] - mean).abs());
        }
        grad_err = grad_err.max(err / scale);
    }
    let grad_ok = grad_err <= 1e-6;

    let m = PomdpModel::from_file(random_model_file(&mut rng, &Dims { nx: 2, nu: 2, ny: 3 }, false, 0.9, 1.0, 0.5))
        .unwrap();
    let gaps: Vec<f64> = [3, 11, 101]
        .iter()
        .map(|&k| max_gap_two_state(&m, &evenly_spaced_two_state(k), 10_000))
        .collect();
    let decreasing = gaps[0] > gaps[1] && gaps[1] > gaps[2];
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "3",
        bound_ok && grad_ok && decreasing && secs <= 120.0,
        format!(
            "min G^-G {bound_slack:.2e} (>= -1e-9); grad rel err {grad_err:.2e} (<= 1e-6); \
             gaps 3/11/101 = {:.3e}/{:.3e}/{:.3e} (strictly decreasing); {secs:.1}s",
            gaps[0], gaps[1], gaps[2]
        ),
    );
}

fn one_state(gamma: f64) -> PomdpModel {
    PomdpModel::from_file(ModelFile {
        description: None,
        num_states: 1,
        num_actions: 1,
        num_obs: 1,
        transition: vec![vec![vec![1.0]]],
        observation: vec![vec![vec![1.0]]],
        initial_observation: vec![vec![1.0]],
        prior: vec![1.0],
        stage_cost: vec![vec![1.0]],
        terminal_cost: vec![0.0],
        discount: gamma,
        beta: 0.0,
        lambda: 0.0,
    })
    .unwrap()
}

fn tight(size: usize) -> SolverConfig {
    SolverConfig {
        belief_set_size: size,
        expansion_rounds: 1,
        bellman_residual_tol: 1e-10,
        max_iterations: 5000,
        seed: 3,
        include_vertices: true,
    }
}

/// Simplex lattice with spacing `1/k`, optionally restricted to the interior.
fn lattice3(k: usize, interior: bool) -> Vec<Belief> {
    let lo = if interior { 1 } else { 0 };
    let mut pts = Vec::new();
    for i in lo..=k {
        for j in lo..=k - i {
            let l = k - i - j;
            if interior && l == 0 {
                continue;
            }
            pts.push(Belief::new(vec![i as f64 / k as f64, j as f64 / k as f64, l as f64 / k as f64]).unwrap());
        }
    }
    pts
}

fn criterion_4(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();

    let m = one_state(0.9);
    let p = solve(&m, &linear_cost_planes(&m).unwrap(), &tight(10)).unwrap();
    let err_a = (p.value(&Belief::vertex(1, 0)) - 9.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut err_b: f64 = 0.0;
    for n in [2, 5] {
        let mut f = random_model_file(&mut rng, &Dims { nx: n, nu: 3, ny: n }, true, 0.9, 0.0, 0.0);
        let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        f.observation = vec![id.clone(); 3];
        f.initial_observation = id;
        let g = f.discount;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|x| (0..3).map(|u| (1.0 - g) * f.terminal_cost[x] + g * f.stage_cost[x][u]).collect())
            .collect();
        let want = common::tabular_value_iteration(&f.transition, &cost, g, 1e-13);
        let m = PomdpModel::from_file(f).unwrap();
        let p = solve(&m, &linear_cost_planes(&m).unwrap(), &tight(50)).unwrap();
        for (x, w) in want.iter().enumerate() {
            err_b = err_b.max((p.value(&Belief::vertex(n, x)) - w).abs());
        }
    }

    let m = PomdpModel::from_file(random_model_file(&mut rng, &Dims { nx: 3, nu: 2, ny: 3 }, false, 0.9, 1.0, 1.0))
        .unwrap();
    let cfg = SolverConfig {
        belief_set_size: 300,
        bellman_residual_tol: 1e-8,
        ..tight(300)
    };
    let linear = solve(&m, &linear_cost_planes(&m).unwrap(), &cfg).unwrap();
    let base = lattice3(25, true);
    let approx = build_pwlc(&m, &base).unwrap();
    let mut gap: f64 = 0.0;
    let mut probes = lattice3(100, false);
    probes.extend((0..10_000).map(|_| sample_simplex(3, &mut rng)));
    for b in &probes {
        for u in 0..m.num_actions() {
            gap = gap.max(approx.evaluate(b, u) - stage_cost_g(&m, b, u));
        }
    }
    let pwlc = solve(&m, &approx.into_planes(), &cfg).unwrap();
    let tol_c = gap / (1.0 - m.discount()) + 1e-6;
    let mut err_c: f64 = 0.0;
    for _ in 0..100 {
        let b = sample_simplex(3, &mut rng);
        // the linear route drops beta H(pi) from the value
        let lin = linear.value(&b) + m.beta() * erpomdp::entropy::belief_entropy(&b);
        err_c = err_c.max((pwlc.value(&b) - lin).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "4",
        err_a <= 1e-6 && err_b <= 1e-6 && err_c <= tol_c && secs <= 300.0,
        format!(
            "(a) |V-9| {err_a:.2e} (<= 1e-6); (b) vertex err {err_b:.2e} (<= 1e-6); \
             (c) linear vs PWLC {err_c:.3e} (<= {tol_c:.3e} with |Xi| = {}); {secs:.1}s",
            base.len()
        ),
    );
}

fn criterion_5(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let m = PomdpModel::from_file(random_model_file(&mut rng, &Dims { nx: 2, nu: 2, ny: 2 }, false, 0.5, 1.0, 0.5))
        .unwrap();
    let base = default_base_points(2).unwrap();
    let cfg = SolverConfig {
        belief_set_size: 100,
        bellman_residual_tol: 1e-8,
        ..SolverConfig::default()
    };
    let p = solve(&m, &build_pwlc(&m, &base).unwrap().into_planes(), &cfg).unwrap();
    let c = geometric_discount_check(&m, &p, 40, 100_000, 5).unwrap();
    let diff = (c.geometric.mean - c.discounted.mean).abs();
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "5",
        c.agrees(3.0) && secs <= 120.0,
        format!(
            "geometric {:.5} vs discounted {:.5}: |diff| {diff:.2e} <= 3*{:.2e} + {:.2e}; {secs:.1}s",
            c.geometric.mean, c.discounted.mean, c.difference_std_err, c.truncation_bound
        ),
    );
}

struct GridRun {
    label: &'static str,
    beta: f64,
    lambda: f64,
    solve_secs: f64,
    report: CriteriaReport,
    ledger_exact: bool,
}

fn grid_policy(base: &PomdpModel, beta: f64, lambda: f64) -> (PomdpModel, AlphaPolicy, f64) {
    let m = base.with_weights(beta, lambda).unwrap();
    let cfg = SolverConfig {
        belief_set_size: 500,
        bellman_residual_tol: 1e-2,
        seed: GRID_SOLVER_SEED,
        ..SolverConfig::default()
    };
    let t = Instant::now();
    let planes = if beta == lambda {
        linear_cost_planes(&m).unwrap()
    } else {
        build_pwlc(&m, &default_base_points(m.num_states()).unwrap()).unwrap().into_planes()
    };
    let p = solve(&m, &planes, &cfg).unwrap();
    (m, p, t.elapsed().as_secs_f64())
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/maze12.json");
    let spec = GridSpec::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let base = build_gridworld(&spec).unwrap();
    let mut runs = Vec::new();
    for (label, beta, lambda) in [("(0,0)", 0.0, 0.0), ("(1,0)", 1.0, 0.0), ("(0,1)", 0.0, 1.0), ("(1,1)", 1.0, 1.0)] {
        let (m, p, solve_secs) = grid_policy(&base, beta, lambda);
        let rows = simulate_episodes(&m, &p, 1000, Horizon::Fixed(100), GRID_MC_SEED).unwrap();
        let ledger_exact = rows.iter().all(|r| r.joint_entropy == r.smoother_entropy + r.io_entropy);
        let report = CriteriaReport::from_episodes(&rows);
        println!(
            "     {label}: solve {solve_secs:.1}s, goal {:.2}±{:.2}, io {:.2}±{:.2}, smoother {:.3}±{:.3}, \
             joint {:.2}±{:.2}, belief sum {:.2}, MAP err {:.3}",
            report.goal_cost.mean,
            report.goal_cost.std_err,
            report.io_entropy.mean,
            report.io_entropy.std_err,
            report.smoother_entropy.mean,
            report.smoother_entropy.std_err,
            report.joint_entropy.mean,
            report.joint_entropy.std_err,
            report.belief_entropy_sum.mean,
            report.map_error_prob.mean,
        );
        runs.push(GridRun {
            label,
            beta,
            lambda,
            solve_secs,
            report,
            ledger_exact,
        });
    }
    let by = |b: f64, l: f64| runs.iter().find(|r| r.beta == b && r.lambda == l).unwrap();
    let argmin = |f: &dyn Fn(&CriteriaReport) -> f64| {
        runs.iter()
            .min_by(|a, b| f(&a.report).total_cmp(&f(&b.report)))
            .unwrap()
            .label
    };

    let goal_best = argmin(&|r| r.goal_cost.mean);
    report(out, "6a", goal_best == "(0,0)", format!("lowest goal cost: {goal_best} (want (0,0))"));

    let io = |b, l| by(b, l).report.io_entropy.mean;
    let reg = io(0.0, 1.0).max(io(1.0, 1.0));
    let unreg = io(0.0, 0.0).min(io(1.0, 0.0));
    report(
        out,
        "6b",
        reg < unreg,
        format!("max io entropy with lambda=1 {reg:.3} < min with lambda=0 {unreg:.3}"),
    );

    let (s10, s00) = (by(1.0, 0.0).report.smoother_entropy.mean, by(0.0, 0.0).report.smoother_entropy.mean);
    report(out, "6c", s10 <= s00, format!("smoother entropy (1,0) {s10:.4} <= (0,0) {s00:.4}"));

    let joint_best = argmin(&|r| r.joint_entropy.mean);
    report(out, "6d", joint_best == "(1,1)", format!("lowest joint entropy: {joint_best} (want (1,1))"));

    let exact = runs.iter().all(|r| r.ledger_exact);
    report(out, "6e", exact, "per-episode joint == smoother + io for all 4000 episodes".into());

    let ratio = by(1.0, 0.0).solve_secs / by(1.0, 1.0).solve_secs;
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "6f",
        ratio >= 100.0 && secs <= 7200.0,
        format!(
            "PWLC (1,0) solve {:.1}s / linear (1,1) solve {:.1}s = {ratio:.2}x (>= 100x); total {secs:.0}s",
            by(1.0, 0.0).solve_secs,
            by(1.0, 1.0).solve_secs
        ),
    );
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let paths = sequences(3, 5);
    let mut matched = 0;
    for case in 0..100 {
        let f = random_model_file(&mut rng, &Dims { nx: 3, nu: 2, ny: 3 }, case % 2 == 0, 0.9, 0.0, 0.0);
        let m = PomdpModel::from_file(f.clone()).unwrap();
        let (mut x, y0) = m.sample_initial(&mut rng);
        let (mut ys, mut us) = (vec![y0], vec![]);
        for _ in 0..4 {
            let u = rng.random_range(0..2);
            let (xn, y) = m.sample_step(x, u, &mut rng);
            x = xn;
            ys.push(y);
            us.push(u);
        }
        let best = paths
            .iter()
            .map(|xs| path_probability(&f, xs, &ys, &us))
            .fold(0.0, f64::max);
        let map = viterbi_map(&m, &ys, &us).unwrap();
        if (path_probability(&f, &map, &ys, &us) - best).abs() <= 1e-12 * best {
            matched += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        out,
        "7",
        matched == 100 && secs <= 60.0,
        format!("{matched}/100 MAP paths attain the exhaustive maximum; {secs:.1}s"),
    );
}

fn main() {
    let mut out = Vec::new();
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    criterion_4(&mut out);
    criterion_5(&mut out);
    criterion_7(&mut out);
    criterion_6(&mut out);

    let unexpected: Vec<&Outcome> = out.iter().filter(|o| !o.pass && !KNOWN_GAPS.contains(&o.id)).collect();
    let passed = out.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", out.len());
    for o in out.iter().filter(|o| !o.pass && KNOWN_GAPS.contains(&o.id)) {
        println!("known gap {}: {}", o.id, o.detail);
    }
    if !unexpected.is_empty() {
        for o in &unexpected {
            eprintln!("unexpected failure {}: {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}
