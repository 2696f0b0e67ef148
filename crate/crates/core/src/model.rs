//! Tabular POMDP model, belief representation and the exact Bayesian filter.
//!
//! Kernels are stored densely and action-major:
//!
//! * `transition[u][from][to]  = p(x_{k+1} = to | x_k = from, u_k = u)`
//! * `observation[u][x][y]     = p(y_{k+1} = y | x_{k+1} = x, u_k = u)`
//! * `initial_observation[x][y] = p(y_0 = y | x_0 = x)`
//!
//! Sparse row views of the transition and observation kernels are derived
//! once at construction and used by the filter and the solver.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance on row sums when a model is loaded.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tolerance on the sum of a user-supplied belief vector.
pub const BELIEF_SUM_TOL: f64 = 1e-9;

/// On-disk (JSON) representation of a model. Every probability table is a
/// dense nested array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_obs: usize,
    /// `transition[u][from][to]`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `observation[u][state][obs]`
    pub observation: Vec<Vec<Vec<f64>>>,
    /// `initial_observation[state][obs]`
    pub initial_observation: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    /// `stage_cost[state][action]`
    pub stage_cost: Vec<Vec<f64>>,
    pub terminal_cost: Vec<f64>,
    pub discount: f64,
    pub beta: f64,
    pub lambda: f64,
}

/// Validated tabular model. Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct PomdpModel {
    description: Option<String>,
    num_states: usize,
    num_actions: usize,
    num_obs: usize,
    transition: Vec<f64>,
    observation: Vec<f64>,
    initial_observation: Vec<f64>,
    prior: Vec<f64>,
    stage_cost: Vec<f64>,
    terminal_cost: Vec<f64>,
    discount: f64,
    beta: f64,
    lambda: f64,
    trans_rows: Vec<Vec<(usize, f64)>>,
    obs_rows: Vec<Vec<(usize, f64)>>,
}

fn check_len(what: impl Into<String>, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Checks a probability row and returns it renormalized.
fn check_row(what: &str, index: String, row: &[f64]) -> Result<Vec<f64>> {
    for (j, &p) in row.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability {
                what: what.to_string(),
                index: format!("{index}[{j}]"),
                value: p,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::NonStochasticRow {
            what: what.to_string(),
            index,
            // rounded so the message shows the authored value, e.g. 1.1
            sum: (sum * 1e12).round() / 1e12,
        });
    }
    Ok(row.iter().map(|p| p / sum).collect())
}

/// Checks every invariant of a model document: dimensions, stochastic rows,
/// finite costs and parameter ranges.
pub fn validate_model(file: &ModelFile) -> Result<()> {
    PomdpModel::from_file(file.clone()).map(|_| ())
}

impl TryFrom<ModelFile> for PomdpModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        PomdpModel::from_file(file)
    }
}

impl From<PomdpModel> for ModelFile {
    fn from(m: PomdpModel) -> Self {
        m.to_file()
    }
}

impl PomdpModel {
    /// Validates a model document and builds the model. Rows whose sums are
    /// within [`ROW_SUM_TOL`] of one are renormalized; anything else is
    /// rejected.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        let (nx, nu, ny) = (file.num_states, file.num_actions, file.num_obs);
        if nx == 0 || nu == 0 || ny == 0 {
            return Err(Error::DimensionMismatch {
                what: "num_states/num_actions/num_obs (must be positive)".into(),
                expected: 1,
                found: 0,
            });
        }
        for (name, v, range, ok) in [
            (
                "discount",
                file.discount,
                "(0,1)",
                file.discount > 0.0 && file.discount < 1.0,
            ),
            ("beta", file.beta, "[0,inf)", file.beta >= 0.0 && file.beta.is_finite()),
            (
                "lambda",
                file.lambda,
                "[0,inf)",
                file.lambda >= 0.0 && file.lambda.is_finite(),
            ),
        ] {
            if !ok {
                return Err(Error::ParameterOutOfRange {
                    name,
                    range,
                    value: v,
                });
            }
        }

        check_len("transition (actions)", nu, file.transition.len())?;
        check_len("observation (actions)", nu, file.observation.len())?;
        let mut transition = Vec::with_capacity(nu * nx * nx);
        let mut observation = Vec::with_capacity(nu * nx * ny);
        for u in 0..nu {
            check_len(format!("transition[{u}]"), nx, file.transition[u].len())?;
            check_len(format!("observation[{u}]"), nx, file.observation[u].len())?;
            for x in 0..nx {
                let row = &file.transition[u][x];
                check_len(format!("transition[{u}][{x}]"), nx, row.len())?;
                transition.extend(check_row("transition", format!("[{u}][{x}]"), row)?);
            }
            for x in 0..nx {
                let row = &file.observation[u][x];
                check_len(format!("observation[{u}][{x}]"), ny, row.len())?;
                observation.extend(check_row("observation", format!("[{u}][{x}]"), row)?);
            }
        }

        check_len("initial_observation", nx, file.initial_observation.len())?;
        let mut initial_observation = Vec::with_capacity(nx * ny);
        for (x, row) in file.initial_observation.iter().enumerate() {
            check_len(format!("initial_observation[{x}]"), ny, row.len())?;
            initial_observation.extend(check_row("initial_observation", format!("[{x}]"), row)?);
        }

        check_len("prior", nx, file.prior.len())?;
        let prior = check_row("prior", String::new(), &file.prior)?;

        check_len("stage_cost", nx, file.stage_cost.len())?;
        let mut stage_cost = Vec::with_capacity(nx * nu);
        for (x, row) in file.stage_cost.iter().enumerate() {
            check_len(format!("stage_cost[{x}]"), nu, row.len())?;
            stage_cost.extend_from_slice(row);
        }
        check_len("terminal_cost", nx, file.terminal_cost.len())?;
        if let Some(&bad) = stage_cost
            .iter()
            .chain(file.terminal_cost.iter())
            .find(|c| !c.is_finite())
        {
            return Err(Error::ParameterOutOfRange {
                name: "cost",
                range: "finite reals",
                value: bad,
            });
        }

        let mut model = PomdpModel {
            description: file.description,
            num_states: nx,
            num_actions: nu,
            num_obs: ny,
            transition,
            observation,
            initial_observation,
            prior,
            stage_cost,
            terminal_cost: file.terminal_cost,
            discount: file.discount,
            beta: file.beta,
            lambda: file.lambda,
            trans_rows: Vec::new(),
            obs_rows: Vec::new(),
        };
        model.build_sparse_rows();
        Ok(model)
    }

    fn build_sparse_rows(&mut self) {
        let (nx, nu, ny) = (self.num_states, self.num_actions, self.num_obs);
        self.trans_rows = (0..nu * nx)
            .map(|r| {
                self.transition[r * nx..(r + 1) * nx]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
        self.obs_rows = (0..nu * nx)
            .map(|r| {
                self.observation[r * ny..(r + 1) * ny]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect()
            })
            .collect();
    }

    /// Converts back to the nested-array document form.
    pub fn to_file(&self) -> ModelFile {
        let (nx, nu, ny) = (self.num_states, self.num_actions, self.num_obs);
        ModelFile {
            description: self.description.clone(),
            num_states: nx,
            num_actions: nu,
            num_obs: ny,
            transition: (0..nu)
                .map(|u| (0..nx).map(|x| self.transition_row(u, x).to_vec()).collect())
                .collect(),
            observation: (0..nu)
                .map(|u| (0..nx).map(|x| self.observation_row(u, x).to_vec()).collect())
                .collect(),
            initial_observation: (0..nx)
                .map(|x| self.initial_observation[x * ny..(x + 1) * ny].to_vec())
                .collect(),
            prior: self.prior.clone(),
            stage_cost: (0..nx)
                .map(|x| self.stage_cost[x * nu..(x + 1) * nu].to_vec())
                .collect(),
            terminal_cost: self.terminal_cost.clone(),
            discount: self.discount,
            beta: self.beta,
            lambda: self.lambda,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        Self::from_file(file)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Same kernels with different regularization weights.
    pub fn with_weights(&self, beta: f64, lambda: f64) -> Result<Self> {
        let mut f = self.to_file();
        f.beta = beta;
        f.lambda = lambda;
        Self::from_file(f)
    }

    /// Same model with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let mut f = self.to_file();
        f.discount = discount;
        Self::from_file(f)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn num_obs(&self) -> usize {
        self.num_obs
    }
    pub fn discount(&self) -> f64 {
        self.discount
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    #[inline]
    pub fn transition(&self, u: usize, from: usize, to: usize) -> f64 {
        self.transition[(u * self.num_states + from) * self.num_states + to]
    }

    #[inline]
    pub fn transition_row(&self, u: usize, from: usize) -> &[f64] {
        let n = self.num_states;
        let start = (u * n + from) * n;
        &self.transition[start..start + n]
    }

    /// Nonzero entries `(to, p)` of `transition[u][from]`.
    #[inline]
    pub fn transition_nonzeros(&self, u: usize, from: usize) -> &[(usize, f64)] {
        &self.trans_rows[u * self.num_states + from]
    }

    #[inline]
    pub fn observation(&self, u: usize, x: usize, y: usize) -> f64 {
        self.observation[(u * self.num_states + x) * self.num_obs + y]
    }

    #[inline]
    pub fn observation_row(&self, u: usize, x: usize) -> &[f64] {
        let start = (u * self.num_states + x) * self.num_obs;
        &self.observation[start..start + self.num_obs]
    }

    /// Nonzero entries `(y, p)` of `observation[u][x]`.
    #[inline]
    pub fn observation_nonzeros(&self, u: usize, x: usize) -> &[(usize, f64)] {
        &self.obs_rows[u * self.num_states + x]
    }

    #[inline]
    pub fn initial_observation(&self, x: usize, y: usize) -> f64 {
        self.initial_observation[x * self.num_obs + y]
    }

    pub fn initial_observation_row(&self, x: usize) -> &[f64] {
        &self.initial_observation[x * self.num_obs..(x + 1) * self.num_obs]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    #[inline]
    pub fn stage_cost(&self, x: usize, u: usize) -> f64 {
        self.stage_cost[x * self.num_actions + u]
    }

    #[inline]
    pub fn terminal_cost(&self, x: usize) -> f64 {
        self.terminal_cost[x]
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        check_index("state", x, self.num_states)
    }
    pub fn check_action(&self, u: usize) -> Result<()> {
        check_index("action", u, self.num_actions)
    }
    pub fn check_obs(&self, y: usize) -> Result<()> {
        check_index("observation", y, self.num_obs)
    }

    pub fn check_belief(&self, belief: &Belief) -> Result<()> {
        check_len("belief", self.num_states, belief.len())
    }

    /// Marginal pmf of the first observation, `p(y_0) = sum_x rho(x) B0[x][y_0]`.
    pub fn initial_obs_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_obs];
        for (x, &r) in self.prior.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (y, py) in p.iter_mut().enumerate() {
                *py += r * self.initial_observation(x, y);
            }
        }
        p
    }

    /// Posterior over `x_0` after observing `y_0`.
    pub fn initial_belief(&self, y0: usize) -> Result<Belief> {
        self.check_obs(y0)?;
        let weights: Vec<f64> = (0..self.num_states)
            .map(|x| self.initial_observation(x, y0) * self.prior[x])
            .collect();
        Belief::from_weights(weights).ok_or(Error::ImpossibleObservation { obs: y0 })
    }

    /// One-step state prediction `sum_xbar A[u][xbar][x] pi(xbar)`.
    pub fn predict(&self, belief: &Belief, u: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.num_states];
        for (xb, &w) in belief.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(x, a) in self.transition_nonzeros(u, xb) {
                p[x] += a * w;
            }
        }
        p
    }

    /// Joint pmf of `(x_k, x_{k+1})`, row-major with `x_k` as row.
    pub fn predict_joint(&self, belief: &Belief, u: usize) -> Result<Vec<f64>> {
        self.check_belief(belief)?;
        self.check_action(u)?;
        let n = self.num_states;
        let mut joint = vec![0.0; n * n];
        for (xb, &w) in belief.iter().enumerate() {
            for (x, &a) in self.transition_row(u, xb).iter().enumerate() {
                joint[xb * n + x] = a * w;
            }
        }
        Ok(joint)
    }

    /// Observation predictive `p(y_{k+1} | pi_k, u_k)`.
    pub fn obs_predictive(&self, belief: &Belief, u: usize) -> Result<Vec<f64>> {
        self.check_belief(belief)?;
        self.check_action(u)?;
        Ok(self.obs_predictive_from_state_pmf(&self.predict(belief, u), u))
    }

    pub(crate) fn obs_predictive_from_state_pmf(&self, pred: &[f64], u: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.num_obs];
        for (x, &p) in pred.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(y, b) in self.observation_nonzeros(u, x) {
                q[y] += b * p;
            }
        }
        q
    }

    /// Bayesian filter update `Pi(pi, u, y)`.
    pub fn filter_update(&self, belief: &Belief, u: usize, y: usize) -> Result<Belief> {
        self.check_belief(belief)?;
        self.check_action(u)?;
        self.check_obs(y)?;
        let pred = self.predict(belief, u);
        let weights: Vec<f64> = pred
            .iter()
            .enumerate()
            .map(|(x, &p)| self.observation(u, x, y) * p)
            .collect();
        Belief::from_weights(weights).ok_or(Error::ImpossibleObservation { obs: y })
    }

    /// Samples `x_0 ~ rho` and `y_0 ~ B0[x_0]`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let x0 = sample_dense(&self.prior, rng);
        let y0 = sample_dense(self.initial_observation_row(x0), rng);
        (x0, y0)
    }

    /// Samples `x' ~ A[u][x]` and `y' ~ B[u][x']`.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: usize, u: usize, rng: &mut R) -> (usize, usize) {
        let next = sample_sparse(self.transition_nonzeros(u, x), rng);
        let y = sample_sparse(self.observation_nonzeros(u, next), rng);
        (next, y)
    }
}

fn check_index(kind: &'static str, index: usize, bound: usize) -> Result<()> {
    if index >= bound {
        return Err(Error::InvalidIndex { kind, index, bound });
    }
    Ok(())
}

/// Inverse-CDF draw from a dense pmf.
pub fn sample_dense<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in pmf.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}

fn sample_sparse<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in row {
        acc += p;
        if r < acc {
            return i;
        }
    }
    row.last().map(|&(i, _)| i).unwrap_or(0)
}

/// A point on the probability simplex over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates and renormalizes a probability vector. The sum must be
    /// within [`BELIEF_SUM_TOL`] of one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidBelief("empty vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidBelief(format!("entry {i} = {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(Error::InvalidBelief(format!("entries sum to {sum}")));
        }
        Ok(Belief(probs.into_iter().map(|p| p / sum).collect()))
    }

    /// Normalizes nonnegative weights; `None` when they sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Option<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return None;
        }
        Some(Belief(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Belief(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Indices with positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.0.iter().zip(w).map(|(p, a)| p * a).sum()
    }

    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Most probable state, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn min_coordinate(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mixes with the uniform pmf so every coordinate is at least `floor`.
    /// Requires `floor * len < 1`.
    pub fn clamp_interior(&self, floor: f64) -> Belief {
        if self.min_coordinate() >= floor {
            return self.clone();
        }
        let keep = 1.0 - floor * self.0.len() as f64;
        Belief(self.0.iter().map(|&p| floor + keep * p).collect())
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A realized trajectory together with its filter beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub beliefs: Vec<Belief>,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Checks the length invariants and that every belief is the filter
    /// recursion applied to its predecessor (max abs deviation `tol`).
    pub fn check_consistency(&self, model: &PomdpModel, tol: f64) -> Result<()> {
        let t = self.horizon();
        check_len("trajectory states", t + 1, self.states.len())?;
        check_len("trajectory observations", t + 1, self.observations.len())?;
        check_len("trajectory beliefs", t + 1, self.beliefs.len())?;
        let mut expected = model.initial_belief(self.observations[0])?;
        for k in 0..=t {
            let dev = expected
                .iter()
                .zip(self.beliefs[k].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dev > tol {
                return Err(Error::InvalidBelief(format!(
                    "belief {k} deviates from the filter by {dev}"
                )));
            }
            if k < t {
                expected =
                    model.filter_update(&self.beliefs[k], self.actions[k], self.observations[k + 1])?;
            }
        }
        Ok(())
    }
}
