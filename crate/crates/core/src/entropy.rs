//! Entropy terms of the belief-MDP stage cost and its two hyperplane
//! representations.
//!
//! All entropies are in bits and use the `0 log 0 = 0` convention.
//!
//! The nonlinear cost is
//!
//! ```text
//! G(pi, u) = (1-g) b H(pi) + g b [H(X_k, X_{k+1}) - H(X_{k+1})] + g l H(Y_{k+1})
//!          + sum_x pi(x) [(1-g) c_T(x) + g c(x, u)]
//! ```
//!
//! (`g` the discount, `b`/`l` the smoother and input-output weights). It is
//! concave in `pi`, so its tangent planes at interior base points give a
//! min-of-hyperplanes upper bound. When `b == l` an exactly linear cost
//! `L(pi, u) = <pi, alpha^u>` is available instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Belief, PomdpModel};
use crate::par;

/// Minimum coordinate for base points and gradient evaluation.
pub const INTERIOR_FLOOR: f64 = 1e-4;

/// Mass on the off-vertex coordinates of the default near-vertex base points.
pub const NEAR_VERTEX_OFF_MASS: f64 = 0.001;

const INV_LN2: f64 = std::f64::consts::LOG2_E;

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of a (not necessarily normalized) nonnegative vector.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().map(|&v| plogp(v)).sum::<f64>()
}

/// Belief-state entropy `H(X_k | y^k, u^{k-1})`.
pub fn belief_entropy(belief: &Belief) -> f64 {
    entropy_bits(belief.probs())
}

/// Entropy of the prediction-step joint of `(x_k, x_{k+1})` minus the entropy
/// of its `x_{k+1}` marginal, i.e. `H(X_k | X_{k+1}, y^k, u^k)`.
pub fn smoother_increment(model: &PomdpModel, belief: &Belief, u: usize) -> f64 {
    let mut joint = 0.0;
    for (xb, &w) in belief.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &(_, a) in model.transition_nonzeros(u, xb) {
            joint -= plogp(a * w);
        }
    }
    let pred = model.predict(belief, u);
    (joint - entropy_bits(&pred)).max(0.0)
}

/// Entropy of the observation predictive `p(y_{k+1} | pi_k, u_k)`.
pub fn obs_entropy_term(model: &PomdpModel, belief: &Belief, u: usize) -> f64 {
    let pred = model.predict(belief, u);
    entropy_bits(&model.obs_predictive_from_state_pmf(&pred, u))
}

/// Entropy of the one-step `(x_{k+1}, y_{k+1})` pair given `(x_k, u_k)`.
pub fn joint_stage_cost(model: &PomdpModel, x: usize, u: usize) -> f64 {
    let mut h = 0.0;
    for &(next, a) in model.transition_nonzeros(u, x) {
        for &(_, b) in model.observation_nonzeros(u, next) {
            h -= plogp(a * b);
        }
    }
    h
}

/// Per-state weight of the expected-cost part of `G`:
/// `(1-g) c_T(x) + g c(x, u)`.
pub fn linear_cost_weights(model: &PomdpModel, u: usize) -> Vec<f64> {
    let g = model.discount();
    (0..model.num_states())
        .map(|x| (1.0 - g) * model.terminal_cost(x) + g * model.stage_cost(x, u))
        .collect()
}

/// The belief-MDP stage cost `G(pi, u)`.
pub fn stage_cost_g(model: &PomdpModel, belief: &Belief, u: usize) -> f64 {
    let g = model.discount();
    let (beta, lambda) = (model.beta(), model.lambda());
    let mut cost = belief.dot(&linear_cost_weights(model, u));
    if beta != 0.0 {
        cost += (1.0 - g) * beta * belief_entropy(belief);
        cost += g * beta * smoother_increment(model, belief, u);
    }
    if lambda != 0.0 {
        cost += g * lambda * obs_entropy_term(model, belief, u);
    }
    cost
}

/// Per-action quantities reused by every gradient evaluation.
struct GradientCache {
    /// `h_A(x) = H(A[u][x][.])`
    row_entropy: Vec<f64>,
    /// `M[x][y] = sum_x' A[u][x][x'] B[u][x'][y]`, dense row-major.
    obs_given_prev: Vec<f64>,
    linear: Vec<f64>,
}

impl GradientCache {
    fn new(model: &PomdpModel, u: usize) -> Self {
        let (n, ny) = (model.num_states(), model.num_obs());
        let row_entropy = (0..n)
            .map(|x| -model.transition_nonzeros(u, x).iter().map(|&(_, a)| plogp(a)).sum::<f64>())
            .collect();
        let mut obs_given_prev = vec![0.0; n * ny];
        for x in 0..n {
            for &(next, a) in model.transition_nonzeros(u, x) {
                for &(y, b) in model.observation_nonzeros(u, next) {
                    obs_given_prev[x * ny + y] += a * b;
                }
            }
        }
        GradientCache {
            row_entropy,
            obs_given_prev,
            linear: linear_cost_weights(model, u),
        }
    }
}

fn check_interior(belief: &Belief) -> Result<()> {
    for (i, &p) in belief.iter().enumerate() {
        if p < INTERIOR_FLOOR {
            return Err(Error::BoundaryBelief {
                index: i,
                value: p,
                floor: INTERIOR_FLOOR,
            });
        }
    }
    Ok(())
}

/// Gradient of `G(., u)` at an interior belief.
///
/// This is the gradient of the natural extension of `G` off the simplex;
/// only its projection onto the simplex tangent space (components minus
/// their mean) is intrinsic, and tangent planes built from it do not depend
/// on the extension.
pub fn grad_g(model: &PomdpModel, belief: &Belief, u: usize) -> Result<Vec<f64>> {
    model.check_belief(belief)?;
    model.check_action(u)?;
    check_interior(belief)?;
    Ok(grad_with_cache(model, belief, u, &GradientCache::new(model, u)))
}

fn grad_with_cache(model: &PomdpModel, belief: &Belief, u: usize, cache: &GradientCache) -> Vec<f64> {
    let (n, ny) = (model.num_states(), model.num_obs());
    let g = model.discount();
    let (beta, lambda) = (model.beta(), model.lambda());
    let mut grad = cache.linear.clone();

    if beta != 0.0 {
        let pred = model.predict(belief, u);
        for (xb, gr) in grad.iter_mut().enumerate() {
            // d/dpi [ b H(pi) + g b sum pi h_A - g b H(A'pi) ]
            let mut d = -beta * (belief[xb].log2() + INV_LN2);
            d += g * beta * cache.row_entropy[xb];
            let mut lp = 0.0;
            for &(x, a) in model.transition_nonzeros(u, xb) {
                lp += a * (pred[x].log2() + INV_LN2);
            }
            d += g * beta * lp;
            *gr += d;
        }
    }
    if lambda != 0.0 {
        let mut q = vec![0.0; ny];
        for (xb, &w) in belief.iter().enumerate() {
            for y in 0..ny {
                q[y] += cache.obs_given_prev[xb * ny + y] * w;
            }
        }
        let logq: Vec<f64> = q
            .iter()
            .map(|&v| if v > 0.0 { v.log2() + INV_LN2 } else { 0.0 })
            .collect();
        for (xb, gr) in grad.iter_mut().enumerate().take(n) {
            let m = &cache.obs_given_prev[xb * ny..(xb + 1) * ny];
            let d: f64 = m.iter().zip(&logq).map(|(a, l)| a * l).sum();
            *gr -= g * lambda * d;
        }
    }
    grad
}

/// Where a hyperplane came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorTag {
    /// Tangent plane at the given base point index.
    BasePoint(usize),
    /// Exact linear cost vector.
    Linear,
    /// Value-function vector backed up at the given belief index.
    Backup(usize),
    /// Loaded from a file or otherwise constructed.
    External,
}

/// Hyperplane `pi -> <pi, weights>` with an attached action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub weights: Vec<f64>,
    pub action: usize,
    pub tag: VectorTag,
}

impl AlphaVector {
    pub fn new(weights: Vec<f64>, action: usize, tag: VectorTag) -> Self {
        AlphaVector {
            weights,
            action,
            tag,
        }
    }

    #[inline]
    pub fn value(&self, belief: &Belief) -> f64 {
        belief.dot(&self.weights)
    }
}

/// Per-action hyperplane sets describing a stage cost as a minimum of planes.
pub type CostPlanes = Vec<Vec<AlphaVector>>;

/// Tangent-plane approximation `G^(pi, u) = min_xi <pi, alpha_xi^u>`.
#[derive(Debug, Clone)]
pub struct PwlcApproximation {
    base_points: Vec<Belief>,
    planes: CostPlanes,
}

/// Tangent plane of `G(., u)` at `xi` as a vector:
/// `G(xi,u) + grad - <xi, grad>`, the scalars added to every component.
fn tangent_plane(model: &PomdpModel, xi: &Belief, u: usize, cache: &GradientCache) -> Vec<f64> {
    let grad = grad_with_cache(model, xi, u, cache);
    let offset = stage_cost_g(model, xi, u) - xi.dot(&grad);
    grad.into_iter().map(|d| d + offset).collect()
}

/// Builds one tangent plane per `(base point, action)`.
pub fn build_pwlc(model: &PomdpModel, base_points: &[Belief]) -> Result<PwlcApproximation> {
    if base_points.is_empty() {
        return Err(Error::InvalidBelief("empty base-point set".into()));
    }
    for xi in base_points {
        model.check_belief(xi)?;
        check_interior(xi)?;
    }
    let caches: Vec<GradientCache> = (0..model.num_actions())
        .map(|u| GradientCache::new(model, u))
        .collect();
    let nb = base_points.len();
    // ordered by (action, base point)
    let flat = par::map_indexed(model.num_actions() * nb, |k| {
        let (u, i) = (k / nb, k % nb);
        tangent_plane(model, &base_points[i], u, &caches[u])
    });
    let mut planes: CostPlanes = vec![Vec::with_capacity(nb); model.num_actions()];
    for (k, w) in flat.into_iter().enumerate() {
        let (u, i) = (k / nb, k % nb);
        planes[u].push(AlphaVector::new(w, u, VectorTag::BasePoint(i)));
    }
    Ok(PwlcApproximation {
        base_points: base_points.to_vec(),
        planes,
    })
}

impl PwlcApproximation {
    pub fn base_points(&self) -> &[Belief] {
        &self.base_points
    }

    pub fn planes(&self) -> &CostPlanes {
        &self.planes
    }

    pub fn into_planes(self) -> CostPlanes {
        self.planes
    }

    /// `G^(pi, u)`.
    pub fn evaluate(&self, belief: &Belief, u: usize) -> f64 {
        min_plane(&self.planes[u], belief).1
    }
}

/// Index and value of the minimizing plane, lowest index on ties.
pub fn min_plane(planes: &[AlphaVector], belief: &Belief) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in planes.iter().enumerate() {
        let v = p.value(belief);
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Exact linear cost vectors `alpha^u[x] = (1-g) c_T(x) + g c(x,u) + g b c~(x,u)`.
/// Only valid when the two regularization weights coincide.
pub fn linear_cost_vectors(model: &PomdpModel) -> Result<Vec<AlphaVector>> {
    if model.beta() != model.lambda() {
        return Err(Error::WeightMismatch {
            beta: model.beta(),
            lambda: model.lambda(),
        });
    }
    let g = model.discount();
    Ok((0..model.num_actions())
        .map(|u| {
            let mut w = linear_cost_weights(model, u);
            if model.beta() != 0.0 {
                for (x, wx) in w.iter_mut().enumerate() {
                    *wx += g * model.beta() * joint_stage_cost(model, x, u);
                }
            }
            AlphaVector::new(w, u, VectorTag::Linear)
        })
        .collect())
}

/// Linear cost vectors wrapped as single-plane cost sets.
pub fn linear_cost_planes(model: &PomdpModel) -> Result<CostPlanes> {
    Ok(linear_cost_vectors(model)?.into_iter().map(|v| vec![v]).collect())
}

/// Barycenter plus one near-vertex point per state, with
/// [`NEAR_VERTEX_OFF_MASS`] on every other coordinate.
pub fn default_base_points(n: usize) -> Result<Vec<Belief>> {
    let top = 1.0 - NEAR_VERTEX_OFF_MASS * (n as f64 - 1.0);
    if n < 2 || top <= NEAR_VERTEX_OFF_MASS {
        return Err(Error::InvalidBelief(format!(
            "default near-vertex base points need 2 <= num_states < {}",
            (1.0 / NEAR_VERTEX_OFF_MASS) as usize
        )));
    }
    let mut pts = vec![Belief::uniform(n)];
    for i in 0..n {
        let mut v = vec![NEAR_VERTEX_OFF_MASS; n];
        v[i] = top;
        pts.push(Belief::new(v)?);
    }
    Ok(pts)
}

/// `k` evenly spaced interior points `(t, 1-t)` on the two-state simplex,
/// `t = i / (k + 1)`.
pub fn evenly_spaced_two_state(k: usize) -> Vec<Belief> {
    (1..=k)
        .map(|i| {
            let t = i as f64 / (k + 1) as f64;
            Belief::new(vec![t, 1.0 - t]).expect("valid")
        })
        .collect()
}

/// Uniform draw from the simplex (flat Dirichlet).
pub fn sample_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Belief {
    let w: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    Belief::from_weights(w).expect("positive weights")
}

/// Monte Carlo estimate of the covering radius of `base_points`:
/// the sample maximum over uniform simplex draws of `min_xi ||pi - xi||_1`.
pub fn sparsity(base_points: &[Belief], samples: usize, seed: u64) -> f64 {
    assert!(!base_points.is_empty(), "sparsity of an empty set");
    let n = base_points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Belief> = (0..samples).map(|_| sample_simplex(n, &mut rng)).collect();
    par::map_slice(&draws, |pi| {
        base_points
            .iter()
            .map(|xi| pi.l1_distance(xi))
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(0.0, f64::max)
}
