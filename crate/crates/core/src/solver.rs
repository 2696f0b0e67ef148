//! Point-based value iteration for minimization belief MDPs whose stage cost
//! is a per-action minimum of hyperplanes.
//!
//! The value function is a finite set of alpha vectors,
//! `V(pi) = min_j <pi, alpha_j>`, each tagged with the action of its first
//! step. Iteration starts from the constant upper bound
//! `max plane component / (1 - g)`, so every vector is the cost of some
//! conditional plan. A sweep backs up every belief of a fixed set (in
//! parallel, merged in belief order) and keeps, for each belief, the
//! minimizing vector among the old and the new ones. Values on the set are
//! therefore nonincreasing and the iteration cannot cycle. The largest
//! pointwise change is the Bellman residual.
//! The belief set grows by sampling reachable beliefs, first under random
//! actions and then under the current policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{AlphaVector, CostPlanes, VectorTag};
use crate::error::{Error, Result};
use crate::format::{fmt_f64, parse_alpha_vectors, write_alpha_vectors};
use crate::model::{sample_dense, Belief, PomdpModel};
use crate::par;

/// Two beliefs closer than this (L1) are the same point of the belief set.
pub const DEDUP_L1: f64 = 1e-9;

/// Values within this of the minimum count as ties in action selection.
pub const TIE_TOL: f64 = 1e-12;

/// Exploration rate of policy-guided belief expansion.
const EXPLORATION_EPS: f64 = 0.15;

/// Longest simulated trajectory used for belief expansion.
const EXPANSION_DEPTH: usize = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub belief_set_size: usize,
    pub expansion_rounds: usize,
    pub bellman_residual_tol: f64,
    /// Sweep limit per expansion round.
    pub max_iterations: usize,
    pub seed: u64,
    /// Adds the vertex beliefs to the sampled set (not counted in
    /// `belief_set_size`).
    #[serde(default = "yes")]
    pub include_vertices: bool,
}

fn yes() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            belief_set_size: 500,
            expansion_rounds: 2,
            bellman_residual_tol: 1e-3,
            max_iterations: 2000,
            seed: 0,
            include_vertices: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bellman_residual_tol > 0.0) {
            return Err(Error::ParameterOutOfRange {
                name: "bellman_residual_tol",
                range: "(0,inf)",
                value: self.bellman_residual_tol,
            });
        }
        if self.belief_set_size == 0 || self.max_iterations == 0 {
            return Err(Error::ParameterOutOfRange {
                name: "belief_set_size/max_iterations",
                range: "[1,inf)",
                value: 0.0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub model_hash: String,
    pub cost_model: String,
    pub config: SolverConfig,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub belief_count: usize,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

/// Alpha-vector value function and the greedy policy it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPolicy {
    num_states: usize,
    vectors: Vec<AlphaVector>,
    pub meta: PolicyMetadata,
}

const POLICY_MAGIC: &str = "erpomdp-policy v1";

impl AlphaPolicy {
    pub fn new(num_states: usize, vectors: Vec<AlphaVector>, meta: PolicyMetadata) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidPolicy("no alpha vectors".into()));
        }
        for v in &vectors {
            if v.weights.len() != num_states {
                return Err(Error::DimensionMismatch {
                    what: "alpha vector".into(),
                    expected: num_states,
                    found: v.weights.len(),
                });
            }
            if v.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidPolicy("non-finite weight".into()));
            }
        }
        Ok(AlphaPolicy {
            num_states,
            vectors,
            meta,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn vectors(&self) -> &[AlphaVector] {
        &self.vectors
    }

    pub fn value(&self, belief: &Belief) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.value(belief))
            .fold(f64::INFINITY, f64::min)
    }

    /// Greedy action at `belief`.
    pub fn action(&self, belief: &Belief) -> usize {
        policy_action(self, belief)
    }

    /// Checks the policy fits `model`.
    pub fn check_model(&self, model: &PomdpModel) -> Result<()> {
        if self.num_states != model.num_states() {
            return Err(Error::DimensionMismatch {
                what: "policy vs model states".into(),
                expected: model.num_states(),
                found: self.num_states,
            });
        }
        if let Some(v) = self.vectors.iter().find(|v| v.action >= model.num_actions()) {
            return Err(Error::InvalidIndex {
                kind: "action",
                index: v.action,
                bound: model.num_actions(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let m = &self.meta;
        let header = vec![
            POLICY_MAGIC.to_string(),
            format!("model_hash {}", m.model_hash),
            format!("cost_model {}", m.cost_model),
            format!("config {}", serde_json::to_string(&m.config)?),
            format!("iterations {}", m.iterations),
            format!("residual {}", fmt_f64(m.residual)),
            format!("converged {}", m.converged),
            format!("belief_count {}", m.belief_count),
        ];
        Ok(write_alpha_vectors(self.num_states, &self.vectors, &header))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file = parse_alpha_vectors(text)?;
        if file.header.first().map(String::as_str) != Some(POLICY_MAGIC) {
            return Err(Error::InvalidPolicy(format!("missing `# {POLICY_MAGIC}` header")));
        }
        let field = |key: &str| -> Result<String> {
            file.header
                .iter()
                .find_map(|h| h.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
                .map(str::to_string)
                .ok_or_else(|| Error::InvalidPolicy(format!("missing header field {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            field(key)?
                .parse::<f64>()
                .map_err(|e| Error::InvalidPolicy(format!("{key}: {e}")))
        };
        let meta = PolicyMetadata {
            model_hash: field("model_hash")?,
            cost_model: field("cost_model")?,
            config: serde_json::from_str(&field("config")?)?,
            iterations: num("iterations")? as usize,
            residual: num("residual")?,
            converged: field("converged")? == "true",
            belief_count: num("belief_count")? as usize,
            residual_history: Vec::new(),
        };
        AlphaPolicy::new(file.num_states, file.vectors, meta)
    }
}

/// Action of the minimizing vector; among (near-)ties the lowest action
/// index wins.
pub fn policy_action(policy: &AlphaPolicy, belief: &Belief) -> usize {
    let values: Vec<f64> = policy.vectors.iter().map(|v| v.value(belief)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.abs().max(1.0);
    policy
        .vectors
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v <= best + tol)
        .map(|(a, _)| a.action)
        .min()
        .expect("policy is nonempty")
}

type Sparse = Vec<(usize, f64)>;

fn sparse_of(b: &Belief) -> Sparse {
    b.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i, p))
        .collect()
}

#[inline]
fn sparse_dot(b: &[(usize, f64)], w: &[f64]) -> f64 {
    b.iter().map(|&(i, p)| p * w[i]).sum()
}

fn within_l1(a: &Belief, b: &Belief, eps: f64) -> bool {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (x - y).abs();
        if acc >= eps {
            return false;
        }
    }
    true
}

/// Result of a single point-based backup.
#[derive(Debug, Clone)]
pub struct BackupResult {
    pub vector: AlphaVector,
    /// `min_u { G^(b,u) + g sum_y p(y|b,u) V(Pi(b,u,y)) }`
    pub value: f64,
}

/// Point-based Bellman backup at `belief` against the value vectors `value`.
pub fn bellman_backup(
    model: &PomdpModel,
    cost_planes: &CostPlanes,
    value: &[AlphaVector],
    belief: &Belief,
) -> BackupResult {
    backup_sparse(model, cost_planes, value, &sparse_of(belief), 0)
}

fn backup_sparse(
    model: &PomdpModel,
    planes: &CostPlanes,
    value: &[AlphaVector],
    b: &[(usize, f64)],
    index: usize,
) -> BackupResult {
    let n = model.num_states();
    let ny = model.num_obs();
    let gamma = model.discount();

    let mut pred = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut sums = vec![0.0; ny];
    let mut obs_mass = vec![0.0; ny];

    let mut best_q = f64::INFINITY;
    let mut best: Option<(usize, usize, Vec<usize>)> = None;

    for u in 0..model.num_actions() {
        for &x in &touched {
            pred[x] = 0.0;
        }
        touched.clear();
        for &(xb, w) in b {
            for &(x, a) in model.transition_nonzeros(u, xb) {
                if pred[x] == 0.0 {
                    touched.push(x);
                }
                pred[x] += a * w;
            }
        }

        let (ci, cv) = {
            let mut bestc = (0, f64::INFINITY);
            for (i, p) in planes[u].iter().enumerate() {
                let v = sparse_dot(b, &p.weights);
                if v < bestc.1 {
                    bestc = (i, v);
                }
            }
            bestc
        };

        obs_mass.iter_mut().for_each(|m| *m = 0.0);
        for &x in &touched {
            for &(y, bo) in model.observation_nonzeros(u, x) {
                obs_mass[y] += bo * pred[x];
            }
        }

        let mut sel = vec![0usize; ny];
        let mut sel_val = vec![f64::INFINITY; ny];
        for (j, alpha) in value.iter().enumerate() {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for &x in &touched {
                let w = pred[x] * alpha.weights[x];
                for &(y, bo) in model.observation_nonzeros(u, x) {
                    sums[y] += bo * w;
                }
            }
            for y in 0..ny {
                if obs_mass[y] > 0.0 && sums[y] < sel_val[y] {
                    sel_val[y] = sums[y];
                    sel[y] = j;
                }
            }
        }
        let future: f64 = (0..ny).filter(|&y| obs_mass[y] > 0.0).map(|y| sel_val[y]).sum();
        let q = cv + gamma * future;
        if q < best_q {
            best_q = q;
            best = Some((u, ci, sel));
        }
    }

    let (u, ci, sel) = best.expect("at least one action");
    // h(x') = sum_y B[u][x'][y] alpha_{sel(y)}(x')
    let h: Vec<f64> = (0..n)
        .map(|x| {
            model
                .observation_nonzeros(u, x)
                .iter()
                .map(|&(y, bo)| bo * value[sel[y]].weights[x])
                .sum()
        })
        .collect();
    let cost = &planes[u][ci].weights;
    let weights: Vec<f64> = (0..n)
        .map(|x| {
            let fut: f64 = model.transition_nonzeros(u, x).iter().map(|&(xn, a)| a * h[xn]).sum();
            cost[x] + gamma * fut
        })
        .collect();
    BackupResult {
        vector: AlphaVector::new(weights, u, VectorTag::Backup(index)),
        value: best_q,
    }
}

/// Initial beliefs `pi_0` for every `y_0` with positive probability.
pub fn initial_beliefs(model: &PomdpModel) -> Vec<Belief> {
    let p = model.initial_obs_distribution();
    let mut out: Vec<Belief> = Vec::new();
    for (y, &py) in p.iter().enumerate() {
        if py > 0.0 {
            let b = model.initial_belief(y).expect("positive probability");
            if !out.iter().any(|o| within_l1(o, &b, DEDUP_L1)) {
                out.push(b);
            }
        }
    }
    out
}

fn sample_obs<R: Rng + ?Sized>(model: &PomdpModel, b: &Belief, u: usize, rng: &mut R) -> usize {
    let q = model.obs_predictive(b, u).expect("valid belief");
    sample_dense(&q, rng)
}

/// Grows `set` up to `cap` with beliefs reached by simulated trajectories
/// started at the `seeds`, choosing actions with `choose`.
fn grow_set<R, F>(
    model: &PomdpModel,
    seeds: &[Belief],
    set: &mut Vec<Belief>,
    cap: usize,
    rng: &mut R,
    mut choose: F,
) where
    R: Rng + ?Sized,
    F: FnMut(&Belief, &mut R) -> usize,
{
    let stall_limit = 1000 + 20 * cap;
    let mut stall = 0;
    let mut start = 0;
    while set.len() < cap && stall < stall_limit {
        let mut b = seeds[start % seeds.len()].clone();
        start += 1;
        for _ in 0..EXPANSION_DEPTH {
            let u = choose(&b, rng);
            let y = sample_obs(model, &b, u, rng);
            b = model.filter_update(&b, u, y).expect("sampled observation is possible");
            if set.iter().any(|s| within_l1(s, &b, DEDUP_L1)) {
                stall += 1;
                if stall >= stall_limit {
                    break;
                }
            } else {
                set.push(b.clone());
                stall = 0;
                if set.len() >= cap {
                    break;
                }
            }
        }
    }
}

/// Seeds plus beliefs reachable under uniformly sampled actions and sampled
/// observations, deduplicated at L1 distance [`DEDUP_L1`] and capped at
/// `config.belief_set_size`. Deterministic given `config.seed`.
pub fn expand_beliefs(model: &PomdpModel, seeds: &[Belief], config: &SolverConfig) -> Vec<Belief> {
    let mut set: Vec<Belief> = Vec::new();
    for s in seeds {
        if !set.iter().any(|o| within_l1(o, s, DEDUP_L1)) {
            set.push(s.clone());
        }
    }
    if seeds.is_empty() {
        return set;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nu = model.num_actions();
    grow_set(model, seeds, &mut set, config.belief_set_size, &mut rng, |_, r| {
        r.random_range(0..nu)
    });
    set
}

struct Sweep {
    vectors: Vec<AlphaVector>,
    values: Vec<f64>,
}

/// One synchronous sweep: back up every belief, then keep for each belief
/// the lowest-index minimizing vector among `value` followed by the new
/// backups.
fn sweep(model: &PomdpModel, planes: &CostPlanes, value: &[AlphaVector], beliefs: &[Sparse]) -> Sweep {
    let backed: Vec<AlphaVector> = par::map_indexed(beliefs.len(), |i| {
        backup_sparse(model, planes, value, &beliefs[i], i).vector
    });
    let candidates: Vec<&AlphaVector> = value.iter().chain(backed.iter()).collect();
    let argmins: Vec<(usize, f64)> = par::map_slice(beliefs, |b| {
        let mut best = (0, f64::INFINITY);
        for (j, v) in candidates.iter().enumerate() {
            let val = sparse_dot(b, &v.weights);
            if val < best.1 {
                best = (j, val);
            }
        }
        best
    });
    let mut keep = vec![false; candidates.len()];
    for &(j, _) in &argmins {
        keep[j] = true;
    }
    let vectors: Vec<AlphaVector> = candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(v, k)| k.then(|| v.clone()))
        .collect();
    Sweep {
        vectors,
        values: argmins.into_iter().map(|(_, v)| v).collect(),
    }
}

/// Constant vector `max component / (1 - g)`; its backup never exceeds it.
fn upper_bound(model: &PomdpModel, planes: &CostPlanes) -> AlphaVector {
    let top = planes
        .iter()
        .flatten()
        .flat_map(|p| p.weights.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    AlphaVector::new(
        vec![top / (1.0 - model.discount()); model.num_states()],
        0,
        VectorTag::Backup(usize::MAX),
    )
}

fn check_planes(model: &PomdpModel, planes: &CostPlanes) -> Result<()> {
    if planes.len() != model.num_actions() {
        return Err(Error::DimensionMismatch {
            what: "cost planes (actions)".into(),
            expected: model.num_actions(),
            found: planes.len(),
        });
    }
    for (u, ps) in planes.iter().enumerate() {
        if ps.is_empty() {
            return Err(Error::InvalidPolicy(format!("no cost planes for action {u}")));
        }
        if let Some(p) = ps.iter().find(|p| p.weights.len() != model.num_states()) {
            return Err(Error::DimensionMismatch {
                what: format!("cost plane for action {u}"),
                expected: model.num_states(),
                found: p.weights.len(),
            });
        }
    }
    Ok(())
}

/// Solves the belief MDP with stage cost `min over cost_planes[u]`.
/// Non-convergence within `max_iterations` sweeps per round is reported
/// through `meta.converged`, not an error.
pub fn solve(model: &PomdpModel, cost_planes: &CostPlanes, config: &SolverConfig) -> Result<AlphaPolicy> {
    config.validate()?;
    check_planes(model, cost_planes)?;
    let n = model.num_states();
    let planes = cost_planes;

    let seeds = initial_beliefs(model);
    let rounds = config.expansion_rounds;
    let cap_for = |r: usize| {
        (config.belief_set_size * (r + 1) / (rounds + 1))
            .max(seeds.len())
            .min(config.belief_set_size)
    };
    let mut beliefs = expand_beliefs(
        model,
        &seeds,
        &SolverConfig {
            belief_set_size: cap_for(0),
            ..config.clone()
        },
    );
    let mut extra = 0;
    if config.include_vertices {
        for i in 0..n {
            let v = Belief::vertex(n, i);
            if !beliefs.iter().any(|b| within_l1(b, &v, DEDUP_L1)) {
                beliefs.push(v);
                extra += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut value = vec![upper_bound(model, planes)];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for round in 0..=rounds {
        let sparse: Vec<Sparse> = beliefs.iter().map(sparse_of).collect();
        let mut current: Vec<f64> = par::map_slice(&sparse, |b| {
            value
                .iter()
                .map(|v| sparse_dot(b, &v.weights))
                .fold(f64::INFINITY, f64::min)
        });
        for _ in 0..config.max_iterations {
            let next = sweep(model, planes, &value, &sparse);
            residual = next
                .values
                .iter()
                .zip(&current)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            history.push(residual);
            iterations += 1;
            value = next.vectors;
            current = next.values;
            if residual <= config.bellman_residual_tol {
                break;
            }
        }
        if round < rounds {
            let snapshot = AlphaPolicy {
                num_states: n,
                vectors: value.clone(),
                meta: empty_meta(config),
            };
            let nu = model.num_actions();
            grow_set(model, &seeds, &mut beliefs, cap_for(round + 1) + extra, &mut rng, |b, r| {
                if r.random::<f64>() < EXPLORATION_EPS {
                    r.random_range(0..nu)
                } else {
                    policy_action(&snapshot, b)
                }
            });
        }
    }

    let meta = PolicyMetadata {
        iterations,
        residual,
        converged: residual <= config.bellman_residual_tol,
        belief_count: beliefs.len(),
        residual_history: history,
        ..empty_meta(config)
    };
    AlphaPolicy::new(n, value, meta)
}

fn empty_meta(config: &SolverConfig) -> PolicyMetadata {
    PolicyMetadata {
        model_hash: String::new(),
        cost_model: String::new(),
        config: config.clone(),
        iterations: 0,
        residual: f64::NAN,
        converged: false,
        belief_count: 0,
        residual_history: Vec::new(),
    }
}

/// Value iteration on a fixed belief set from the same upper bound as
/// [`solve`]. Returns the value of each belief after every sweep.
pub fn value_trace(
    model: &PomdpModel,
    cost_planes: &CostPlanes,
    beliefs: &[Belief],
    sweeps: usize,
) -> Vec<Vec<f64>> {
    let sparse: Vec<Sparse> = beliefs.iter().map(sparse_of).collect();
    let mut value = vec![upper_bound(model, cost_planes)];
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let s = sweep(model, cost_planes, &value, &sparse);
        value = s.vectors;
        out.push(s.values);
    }
    out
}
