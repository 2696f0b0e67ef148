//! Random instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use erpomdp::{ModelFile, PomdpModel};
use rand::Rng;

/// Random pmf; with `sparse`, each entry is zeroed with probability 0.3
/// (keeping at least one positive entry).
pub fn random_pmf<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    if sparse {
        let keep = rng.random_range(0..n);
        for (i, v) in w.iter_mut().enumerate() {
            if i != keep && rng.random::<f64>() < 0.3 {
                *v = 0.0;
            }
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
}

pub fn random_model_file<R: Rng>(rng: &mut R, d: &Dims, sparse: bool, gamma: f64, beta: f64, lambda: f64) -> ModelFile {
    let kernel = |rng: &mut R, rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| random_pmf(rng, cols, sparse)).collect()
    };
    ModelFile {
        description: None,
        num_states: d.nx,
        num_actions: d.nu,
        num_obs: d.ny,
        transition: (0..d.nu).map(|_| kernel(rng, d.nx, d.nx)).collect(),
        observation: (0..d.nu).map(|_| kernel(rng, d.nx, d.ny)).collect(),
        initial_observation: kernel(rng, d.nx, d.ny),
        prior: random_pmf(rng, d.nx, false),
        stage_cost: (0..d.nx).map(|_| (0..d.nu).map(|_| rng.random::<f64>() * 2.0).collect()).collect(),
        terminal_cost: (0..d.nx).map(|_| rng.random::<f64>()).collect(),
        discount: gamma,
        beta,
        lambda,
    }
}

pub fn random_model<R: Rng>(rng: &mut R, d: &Dims, sparse: bool, gamma: f64, beta: f64, lambda: f64) -> PomdpModel {
    PomdpModel::from_file(random_model_file(rng, d, sparse, gamma, beta, lambda)).unwrap()
}

/// Joint probability `p(x^T, y^T | u^{T-1})` straight from the model tables.
pub fn path_probability(m: &ModelFile, xs: &[usize], ys: &[usize], us: &[usize]) -> f64 {
    let mut p = m.prior[xs[0]] * m.initial_observation[xs[0]][ys[0]];
    for k in 0..us.len() {
        let u = us[k];
        p *= m.transition[u][xs[k]][xs[k + 1]] * m.observation[u][xs[k + 1]][ys[k + 1]];
    }
    p
}

/// All sequences of length `len` over `0..n`, in lexicographic order.
pub fn sequences(n: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..n).map(move |i| {
                    let mut t = s.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

/// Posterior `p(x_T | y^T, u^{T-1})` by summing the joint over state paths.
pub fn enumerated_posterior(m: &ModelFile, ys: &[usize], us: &[usize]) -> Vec<f64> {
    let t = us.len();
    let mut post = vec![0.0; m.num_states];
    for xs in sequences(m.num_states, t + 1) {
        post[xs[t]] += path_probability(m, &xs, ys, us);
    }
    let z: f64 = post.iter().sum();
    post.iter().map(|p| p / z).collect()
}

/// Tabular value iteration for the fully observed MDP with stage cost
/// `cost[x][u]` and transitions `a[u][x][x']`.
pub fn tabular_value_iteration(a: &[Vec<Vec<f64>>], cost: &[Vec<f64>], gamma: f64, tol: f64) -> Vec<f64> {
    let n = cost.len();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|x| {
                (0..a.len())
                    .map(|u| cost[x][u] + gamma * (0..n).map(|y| a[u][x][y] * v[y]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let diff = next.iter().zip(&v).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        v = next;
        if diff < tol {
            return v;
        }
    }
}

/// Entropy in bits, written out independently of the library.
pub fn h2(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// Stage cost `G(pi, u)` evaluated from its definition with dense loops.
pub fn stage_cost_reference(m: &ModelFile, pi: &[f64], u: usize) -> f64 {
    let n = m.num_states;
    let g = m.discount;
    let pred: Vec<f64> = (0..n).map(|x| (0..n).map(|xb| pi[xb] * m.transition[u][xb][x]).sum()).collect();
    let q: Vec<f64> = (0..m.num_obs)
        .map(|y| (0..n).map(|x| pred[x] * m.observation[u][x][y]).sum())
        .collect();
    let joint: Vec<f64> = (0..n)
        .flat_map(|xb| (0..n).map(move |x| (xb, x)))
        .map(|(xb, x)| pi[xb] * m.transition[u][xb][x])
        .collect();
    let linear: f64 = (0..n)
        .map(|x| pi[x] * ((1.0 - g) * m.terminal_cost[x] + g * m.stage_cost[x][u]))
        .sum();
    (1.0 - g) * m.beta * h2(pi) + g * m.beta * (h2(&joint) - h2(&pred)) + g * m.lambda * h2(&q) + linear
}
