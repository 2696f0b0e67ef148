//! Trajectory estimation and entropy accounting.
//!
//! * [`viterbi_map`] decodes the MAP state trajectory.
//! * [`accumulate_ledger`] sums the belief-form entropy terms along one
//!   realized trajectory; averaged over episodes these estimate the smoother,
//!   input-output and joint entropies.
//! * [`brute_force_entropies`] and [`belief_form_expectations`] compute the
//!   same quantities exactly on small instances, by enumerating the joint pmf
//!   of `(x^T, y^T, u^{T-1})` and the information-state tree respectively.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{belief_entropy, entropy_bits, joint_stage_cost, obs_entropy_term, smoother_increment};
use crate::error::{Error, Result};
use crate::model::{Belief, PomdpModel, TrajectoryRecord};
use crate::solver::AlphaPolicy;

/// Maximum number of `(x^T, y^T, u^{T-1})` atoms the brute-force oracle
/// will enumerate.
pub const ENUMERATION_GUARD: f64 = 1e7;

/// MAP estimate of `x^T` given `y^T` and `u^{T-1}`, by log-domain dynamic
/// programming. Ties resolve to the lowest state index.
pub fn viterbi_map(model: &PomdpModel, observations: &[usize], actions: &[usize]) -> Result<Vec<usize>> {
    if observations.len() != actions.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "observations vs actions + 1".into(),
            expected: actions.len() + 1,
            found: observations.len(),
        });
    }
    for &y in observations {
        model.check_obs(y)?;
    }
    for &u in actions {
        model.check_action(u)?;
    }
    let n = model.num_states();
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };

    let mut delta: Vec<f64> = (0..n)
        .map(|x| ln(model.prior()[x]) + ln(model.initial_observation(x, observations[0])))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(actions.len());

    for (k, &u) in actions.iter().enumerate() {
        let y = observations[k + 1];
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0usize; n];
        // scanning predecessors in increasing order keeps the lowest index on ties
        for (xb, &d) in delta.iter().enumerate() {
            if d == f64::NEG_INFINITY {
                continue;
            }
            for &(x, a) in model.transition_nonzeros(u, xb) {
                let cand = d + a.ln();
                if cand > next[x] {
                    next[x] = cand;
                    arg[x] = xb;
                }
            }
        }
        for (x, v) in next.iter_mut().enumerate() {
            *v += ln(model.observation(u, x, y));
        }
        delta = next;
        back.push(arg);
    }

    let mut last = 0;
    for (x, &d) in delta.iter().enumerate() {
        if d > delta[last] {
            last = x;
        }
    }
    if delta[last] == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood);
    }
    let mut path = vec![last; actions.len() + 1];
    for k in (0..actions.len()).rev() {
        path[k] = back[k][path[k + 1]];
    }
    Ok(path)
}

/// `H(Y_0)` with `p(y_0) = sum_x rho(x) B0[x][y_0]`.
pub fn initial_obs_entropy(model: &PomdpModel) -> f64 {
    entropy_bits(&model.initial_obs_distribution())
}

/// `H(X_0, Y_0)`.
pub fn initial_joint_entropy(model: &PomdpModel) -> f64 {
    let mut h = 0.0;
    for x in 0..model.num_states() {
        let row: Vec<f64> = model
            .initial_observation_row(x)
            .iter()
            .map(|b| b * model.prior()[x])
            .collect();
        h += entropy_bits(&row);
    }
    h
}

/// Per-episode sums of the belief-form entropy terms (bits).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyLedger {
    /// `H(pi_T) + sum_{k<T} [H(X_k,X_{k+1}) - H(X_{k+1})](pi_k, u_k)`
    pub smoother_sum: f64,
    /// `H(Y_0) + sum_{k<T} H(Y_{k+1} | pi_k, u_k)`
    pub io_sum: f64,
    /// `sum_{k<=T} H(pi_k)`
    pub belief_entropy_sum: f64,
    /// `smoother_sum + io_sum`
    pub joint_sum: f64,
}

pub fn accumulate_ledger(model: &PomdpModel, record: &TrajectoryRecord) -> EntropyLedger {
    let t = record.horizon();
    let mut smoother = belief_entropy(&record.beliefs[t]);
    let mut io = initial_obs_entropy(model);
    for k in 0..t {
        let (b, u) = (&record.beliefs[k], record.actions[k]);
        smoother += smoother_increment(model, b, u);
        io += obs_entropy_term(model, b, u);
    }
    let belief_entropy_sum = record.beliefs.iter().map(belief_entropy).sum();
    EntropyLedger {
        smoother_sum: smoother,
        io_sum: io,
        belief_entropy_sum,
        joint_sum: smoother + io,
    }
}

/// A policy on information states `i_k = (y^k, u^{k-1})`, possibly
/// stochastic and nonstationary.
pub trait InfoPolicy {
    /// pmf of `u_k` given `y^k` (length `k+1`) and `u^{k-1}` (length `k`).
    fn action_probs(&self, observations: &[usize], actions: &[usize]) -> Result<Vec<f64>>;
}

/// Explicit table of `mu_k^{i_k}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TablePolicy {
    num_actions: usize,
    table: HashMap<(Vec<usize>, Vec<usize>), Vec<f64>>,
    default: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableEntry {
    observations: Vec<usize>,
    actions: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableDocument {
    num_actions: usize,
    #[serde(default)]
    default: Option<Vec<f64>>,
    entries: Vec<TableEntry>,
}

fn check_pmf(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidPolicy(format!("pmf has {} entries, expected {n}", p.len())));
    }
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPolicy(format!("not a pmf: {p:?}")));
    }
    Ok(())
}

impl TablePolicy {
    pub fn new(num_actions: usize) -> Self {
        TablePolicy {
            num_actions,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, observations: Vec<usize>, actions: Vec<usize>, probs: Vec<f64>) -> Result<()> {
        check_pmf(&probs, self.num_actions)?;
        if observations.len() != actions.len() + 1 {
            return Err(Error::InvalidPolicy("information state needs |y| = |u| + 1".into()));
        }
        self.table.insert((observations, actions), probs);
        Ok(())
    }

    /// pmf used for information states missing from the table.
    pub fn set_default(&mut self, probs: Vec<f64>) -> Result<()> {
        check_pmf(&probs, self.num_actions)?;
        self.default = Some(probs);
        Ok(())
    }

    pub fn uniform(num_actions: usize) -> Self {
        let mut p = TablePolicy::new(num_actions);
        p.default = Some(vec![1.0 / num_actions as f64; num_actions]);
        p
    }

    /// Random table over every information state reachable before `horizon`.
    /// Deterministic tables put all mass on one sampled action.
    pub fn random<R: Rng + ?Sized>(model: &PomdpModel, horizon: usize, deterministic: bool, rng: &mut R) -> Self {
        let (nu, ny) = (model.num_actions(), model.num_obs());
        let mut p = TablePolicy::new(nu);
        let mut frontier: Vec<(Vec<usize>, Vec<usize>)> = (0..ny).map(|y| (vec![y], vec![])).collect();
        for k in 0..horizon {
            let mut next = Vec::new();
            for (ys, us) in frontier {
                let probs = if deterministic {
                    let mut v = vec![0.0; nu];
                    v[rng.random_range(0..nu)] = 1.0;
                    v
                } else {
                    let w: Vec<f64> = (0..nu).map(|_| rng.random::<f64>() + 0.05).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / s).collect()
                };
                if k + 1 < horizon {
                    for u in 0..nu {
                        for y in 0..ny {
                            let mut ys2 = ys.clone();
                            ys2.push(y);
                            let mut us2 = us.clone();
                            us2.push(u);
                            next.push((ys2, us2));
                        }
                    }
                }
                p.table.insert((ys, us), probs);
            }
            frontier = next;
        }
        p
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: TableDocument = serde_json::from_str(s)?;
        let mut p = TablePolicy::new(doc.num_actions);
        if let Some(d) = doc.default {
            p.set_default(d)?;
        }
        for e in doc.entries {
            p.insert(e.observations, e.actions, e.probs)?;
        }
        Ok(p)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut entries: Vec<TableEntry> = self
            .table
            .iter()
            .map(|((o, a), p)| TableEntry {
                observations: o.clone(),
                actions: a.clone(),
                probs: p.clone(),
            })
            .collect();
        entries.sort_by(|a, b| (a.actions.len(), &a.observations, &a.actions).cmp(&(b.actions.len(), &b.observations, &b.actions)));
        Ok(serde_json::to_string_pretty(&TableDocument {
            num_actions: self.num_actions,
            default: self.default.clone(),
            entries,
        })?)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

impl InfoPolicy for TablePolicy {
    fn action_probs(&self, observations: &[usize], actions: &[usize]) -> Result<Vec<f64>> {
        self.table
            .get(&(observations.to_vec(), actions.to_vec()))
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| {
                Error::InvalidPolicy(format!(
                    "no entry for y = {observations:?}, u = {actions:?}"
                ))
            })
    }
}

/// Deterministic stationary belief policy viewed as an information-state
/// policy: the belief is recomputed by the filter.
pub struct BeliefPolicy<'a> {
    pub model: &'a PomdpModel,
    pub policy: &'a AlphaPolicy,
}

impl InfoPolicy for BeliefPolicy<'_> {
    fn action_probs(&self, observations: &[usize], actions: &[usize]) -> Result<Vec<f64>> {
        let mut b = self.model.initial_belief(observations[0])?;
        for (k, &u) in actions.iter().enumerate() {
            b = self.model.filter_update(&b, u, observations[k + 1])?;
        }
        let mut p = vec![0.0; self.model.num_actions()];
        p[self.policy.action(&b)] = 1.0;
        Ok(p)
    }
}

/// Exact entropies (bits) of a horizon-`T` problem under a given policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BruteForceEntropies {
    /// `H(X^T | Y^T, U^{T-1})`
    pub smoother: f64,
    /// `H(Y^T, U^{T-1})`
    pub io: f64,
    /// `H(X^T, Y^T, U^{T-1})`
    pub joint: f64,
    /// `H(Y^T || U^{T-1})`
    pub causal_obs: f64,
    /// `H(U^{T-1} || Y^{T-1})`
    pub causal_control: f64,
    /// `H(X_0, Y_0)`
    pub initial_joint: f64,
    /// `H(Y_0)`
    pub initial_obs: f64,
    /// `E[sum_{k<T} c~(X_k, U_k)]`
    pub expected_joint_stage_cost: f64,
}

fn check_guard(model: &PomdpModel, horizon: usize) -> Result<()> {
    let atoms = (model.num_states() as f64).powi(horizon as i32 + 1)
        * (model.num_obs() as f64).powi(horizon as i32 + 1)
        * (model.num_actions() as f64).powi(horizon as i32);
    if atoms > ENUMERATION_GUARD {
        return Err(Error::TooLarge {
            atoms,
            limit: ENUMERATION_GUARD,
        });
    }
    Ok(())
}

struct Enumerator<'a, P: InfoPolicy + ?Sized> {
    model: &'a PomdpModel,
    policy: &'a P,
    horizon: usize,
    ys: Vec<usize>,
    us: Vec<usize>,
    joint_h: f64,
    stage: f64,
    /// marginals of interleaved `(y_0, u_0, y_1, ...)` prefixes
    prefixes: HashMap<Vec<usize>, f64>,
}

impl<P: InfoPolicy + ?Sized> Enumerator<'_, P> {
    fn interleaved(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.ys.len() + self.us.len());
        for k in 0..self.ys.len() {
            s.push(self.ys[k]);
            if k < self.us.len() {
                s.push(self.us[k]);
            }
        }
        s
    }

    fn visit(&mut self, k: usize, x: usize, p: f64, stage_sum: f64) -> Result<()> {
        if k == self.horizon {
            self.joint_h -= p * p.log2();
            self.stage += p * stage_sum;
            let seq = self.interleaved();
            for len in 1..=seq.len() {
                *self.prefixes.entry(seq[..len].to_vec()).or_insert(0.0) += p;
            }
            return Ok(());
        }
        let mu = self.policy.action_probs(&self.ys, &self.us)?;
        let model = self.model;
        for (u, &pu) in mu.iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            let c = joint_stage_cost(model, x, u);
            for &(xn, a) in model.transition_nonzeros(u, x) {
                for &(y, b) in model.observation_nonzeros(u, xn) {
                    self.us.push(u);
                    self.ys.push(y);
                    self.visit(k + 1, xn, p * pu * a * b, stage_sum + c)?;
                    self.ys.pop();
                    self.us.pop();
                }
            }
        }
        Ok(())
    }
}

/// Conditional entropy `-sum P(s) log P(s) / P(parent(s))` over prefixes of
/// the given length.
fn conditional_entropy(prefixes: &HashMap<Vec<usize>, f64>, len: usize) -> f64 {
    let mut h = 0.0;
    for (s, &p) in prefixes.iter().filter(|(s, _)| s.len() == len) {
        if p <= 0.0 {
            continue;
        }
        let parent = if len == 1 { 1.0 } else { prefixes[&s[..len - 1]] };
        h -= p * (p / parent).log2();
    }
    h
}

/// Exact entropies by enumerating every `(x^T, y^T, u^{T-1})` atom of the
/// joint pmf.
pub fn brute_force_entropies<P: InfoPolicy + ?Sized>(
    model: &PomdpModel,
    policy: &P,
    horizon: usize,
) -> Result<BruteForceEntropies> {
    check_guard(model, horizon)?;
    let mut e = Enumerator {
        model,
        policy,
        horizon,
        ys: Vec::new(),
        us: Vec::new(),
        joint_h: 0.0,
        stage: 0.0,
        prefixes: HashMap::new(),
    };
    for x0 in 0..model.num_states() {
        let r = model.prior()[x0];
        if r == 0.0 {
            continue;
        }
        for y0 in 0..model.num_obs() {
            let b = model.initial_observation(x0, y0);
            if b == 0.0 {
                continue;
            }
            e.ys.push(y0);
            e.visit(0, x0, r * b, 0.0)?;
            e.ys.pop();
        }
    }
    let full = 2 * horizon + 1;
    let io: f64 = -e
        .prefixes
        .iter()
        .filter(|(s, _)| s.len() == full)
        .map(|(_, &p)| if p > 0.0 { p * p.log2() } else { 0.0 })
        .sum::<f64>();
    let causal_obs = (0..=horizon).map(|k| conditional_entropy(&e.prefixes, 2 * k + 1)).sum();
    let causal_control = (0..horizon).map(|k| conditional_entropy(&e.prefixes, 2 * k + 2)).sum();
    Ok(BruteForceEntropies {
        smoother: e.joint_h - io,
        io,
        joint: e.joint_h,
        causal_obs,
        causal_control,
        initial_joint: initial_joint_entropy(model),
        initial_obs: initial_obs_entropy(model),
        expected_joint_stage_cost: e.stage,
    })
}

/// Expectations of the belief-form terms, computed on the information-state
/// tree with the Bayesian filter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeliefFormTerms {
    /// `E[H(pi_T) + sum_{k<T} smoother_increment(pi_k, U_k)]`
    pub smoother: f64,
    /// `E[sum_{k<T} obs_entropy_term(pi_k, U_k)]`
    pub obs_increments: f64,
    /// `E[sum_{k<T} <pi_k, c~(., U_k)>]`
    pub joint_stage_cost: f64,
    /// `E[sum_{k<=T} H(pi_k)]`
    pub belief_entropy_sum: f64,
}

pub fn belief_form_expectations<P: InfoPolicy + ?Sized>(
    model: &PomdpModel,
    policy: &P,
    horizon: usize,
) -> Result<BeliefFormTerms> {
    check_guard(model, horizon)?;
    struct Walk<'a, P: InfoPolicy + ?Sized> {
        model: &'a PomdpModel,
        policy: &'a P,
        horizon: usize,
        ys: Vec<usize>,
        us: Vec<usize>,
        out: BeliefFormTerms,
        ctilde: Vec<Vec<f64>>,
    }
    impl<P: InfoPolicy + ?Sized> Walk<'_, P> {
        fn visit(&mut self, k: usize, b: &Belief, p: f64) -> Result<()> {
            self.out.belief_entropy_sum += p * belief_entropy(b);
            if k == self.horizon {
                self.out.smoother += p * belief_entropy(b);
                return Ok(());
            }
            let mu = self.policy.action_probs(&self.ys, &self.us)?;
            let model = self.model;
            for (u, &pu) in mu.iter().enumerate() {
                if pu == 0.0 {
                    continue;
                }
                let w = p * pu;
                self.out.smoother += w * smoother_increment(model, b, u);
                self.out.obs_increments += w * obs_entropy_term(model, b, u);
                self.out.joint_stage_cost += w * b.dot(&self.ctilde[u]);
                let q = model.obs_predictive(b, u)?;
                for (y, &py) in q.iter().enumerate() {
                    if py <= 0.0 {
                        continue;
                    }
                    let next = model.filter_update(b, u, y)?;
                    self.us.push(u);
                    self.ys.push(y);
                    self.visit(k + 1, &next, w * py)?;
                    self.ys.pop();
                    self.us.pop();
                }
            }
            Ok(())
        }
    }
    let ctilde = (0..model.num_actions())
        .map(|u| (0..model.num_states()).map(|x| joint_stage_cost(model, x, u)).collect())
        .collect();
    let mut w = Walk {
        model,
        policy,
        horizon,
        ys: Vec::new(),
        us: Vec::new(),
        out: BeliefFormTerms::default(),
        ctilde,
    };
    for (y0, &py) in model.initial_obs_distribution().iter().enumerate() {
        if py <= 0.0 {
            continue;
        }
        let b = model.initial_belief(y0)?;
        w.ys.push(y0);
        w.visit(0, &b, py)?;
        w.ys.pop();
    }
    Ok(w.out)
}

/// Residuals of the four entropy identities on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `H(Y,U) - [H(Y||U) + H(U||Y)]`
    pub io_causal_split: f64,
    /// `H(X,Y,U) - [H(X_0,Y_0) + H(U||Y) + E sum c~]`
    pub joint_linear_form: f64,
    /// `H(X|Y,U) - E[H(pi_T) + sum smoother increments]`
    pub smoother_belief_form: f64,
    /// `H(Y||U) - [H(Y_0) + E sum obs entropy terms]`
    pub causal_obs_belief_form: f64,
}

impl IdentityResiduals {
    pub fn max_abs(&self) -> f64 {
        [
            self.io_causal_split,
            self.joint_linear_form,
            self.smoother_belief_form,
            self.causal_obs_belief_form,
        ]
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
    }
}

pub fn identity_residuals<P: InfoPolicy + ?Sized>(
    model: &PomdpModel,
    policy: &P,
    horizon: usize,
) -> Result<(BruteForceEntropies, BeliefFormTerms, IdentityResiduals)> {
    let bf = brute_force_entropies(model, policy, horizon)?;
    let bt = belief_form_expectations(model, policy, horizon)?;
    let r = IdentityResiduals {
        io_causal_split: bf.io - (bf.causal_obs + bf.causal_control),
        joint_linear_form: bf.joint - (bf.initial_joint + bf.causal_control + bt.joint_stage_cost),
        smoother_belief_form: bf.smoother - bt.smoother,
        causal_obs_belief_form: bf.causal_obs - (bf.initial_obs + bt.obs_increments),
    };
    Ok((bf, bt, r))
}
