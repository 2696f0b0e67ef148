//! Episode simulation and Monte Carlo evaluation of belief policies.
//!
//! Episode `i` of a run seeded with `s` draws from its own ChaCha stream
//! `(s, i)`, and per-episode results are summed in episode order with
//! compensated summation, so reports do not depend on the thread count.

pub mod grid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::entropy::stage_cost_g;
use crate::error::{Error, Result};
use crate::estimation::{accumulate_ledger, viterbi_map, EntropyLedger};
use crate::model::{PomdpModel, TrajectoryRecord};
use crate::par::{self, compensated_sum};
use crate::solver::AlphaPolicy;

pub use grid::{build_gridworld, Direction, GridSpec};

/// Draws `T` with `P(T = t) = gamma^t (1 - gamma)`.
pub fn sample_horizon<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> usize {
    let g = Geometric::new(1.0 - gamma).expect("discount in (0,1)");
    g.sample(rng) as usize
}

/// Episode length rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Fixed(usize),
    /// Geometric with the model's discount factor.
    Geometric,
}

impl std::str::FromStr for Horizon {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "geometric" {
            return Ok(Horizon::Geometric);
        }
        s.strip_prefix("fixed:")
            .and_then(|t| t.parse().ok())
            .map(Horizon::Fixed)
            .ok_or_else(|| format!("expected `fixed:T` or `geometric`, got {s:?}"))
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Horizon::Fixed(t) => write!(f, "fixed:{t}"),
            Horizon::Geometric => write!(f, "geometric"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub record: TrajectoryRecord,
    pub ledger: EntropyLedger,
    /// `sum_{k=0}^{T} c(x_k, u_k)`, including the action chosen at `T`.
    pub cost: f64,
}

/// Simulates one episode of `horizon` transitions under the greedy policy.
pub fn run_episode<R: Rng + ?Sized>(
    model: &PomdpModel,
    policy: &AlphaPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Episode> {
    policy.check_model(model)?;
    let (mut x, y0) = model.sample_initial(rng);
    let mut belief = model.initial_belief(y0)?;
    let mut record = TrajectoryRecord {
        states: vec![x],
        observations: vec![y0],
        actions: Vec::with_capacity(horizon),
        beliefs: vec![belief.clone()],
    };
    let mut cost = 0.0;
    for _ in 0..horizon {
        let u = policy.action(&belief);
        cost += model.stage_cost(x, u);
        let (xn, y) = model.sample_step(x, u, rng);
        belief = model.filter_update(&belief, u, y)?;
        x = xn;
        record.states.push(x);
        record.observations.push(y);
        record.actions.push(u);
        record.beliefs.push(belief.clone());
    }
    cost += model.stage_cost(x, policy.action(&belief));
    let ledger = accumulate_ledger(model, &record);
    Ok(Episode { record, ledger, cost })
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std_err: f64,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = compensated_sum(xs.iter().copied()) / n;
        if xs.len() < 2 {
            return Stat { mean, std_err: 0.0 };
        }
        let var = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
        Stat {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// Per-episode criteria, one row of the long-format episode table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub horizon: usize,
    pub goal_cost: f64,
    pub io_entropy: f64,
    pub smoother_entropy: f64,
    pub joint_entropy: f64,
    pub belief_entropy_sum: f64,
    pub map_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub episodes: usize,
    pub goal_cost: Stat,
    pub io_entropy: Stat,
    pub smoother_entropy: Stat,
    pub joint_entropy: Stat,
    pub belief_entropy_sum: Stat,
    pub map_error_prob: Stat,
    /// Filled in by callers that timed the solve.
    pub solve_time_seconds: Option<f64>,
}

impl CriteriaReport {
    pub fn from_episodes(rows: &[EpisodeSummary]) -> CriteriaReport {
        let col = |f: fn(&EpisodeSummary) -> f64| Stat::from_samples(&rows.iter().map(f).collect::<Vec<_>>());
        CriteriaReport {
            episodes: rows.len(),
            goal_cost: col(|r| r.goal_cost),
            io_entropy: col(|r| r.io_entropy),
            smoother_entropy: col(|r| r.smoother_entropy),
            joint_entropy: col(|r| r.joint_entropy),
            belief_entropy_sum: col(|r| r.belief_entropy_sum),
            map_error_prob: col(|r| if r.map_error { 1.0 } else { 0.0 }),
            solve_time_seconds: None,
        }
    }

    /// `(criterion, stat)` pairs in a fixed order.
    pub fn rows(&self) -> [(&'static str, Stat); 6] {
        [
            ("goal_cost", self.goal_cost),
            ("io_entropy", self.io_entropy),
            ("smoother_entropy", self.smoother_entropy),
            ("joint_entropy", self.joint_entropy),
            ("belief_entropy_sum", self.belief_entropy_sum),
            ("map_error_prob", self.map_error_prob),
        ]
    }
}

/// Random stream of episode `index` in a run seeded with `seed`.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn summarize(model: &PomdpModel, index: usize, ep: &Episode) -> Result<EpisodeSummary> {
    let map = viterbi_map(model, &ep.record.observations, &ep.record.actions)?;
    Ok(EpisodeSummary {
        episode: index,
        horizon: ep.record.horizon(),
        goal_cost: ep.cost,
        io_entropy: ep.ledger.io_sum,
        smoother_entropy: ep.ledger.smoother_sum,
        joint_entropy: ep.ledger.joint_sum,
        belief_entropy_sum: ep.ledger.belief_entropy_sum,
        map_error: map != ep.record.states,
    })
}

/// Runs `episodes` episodes and returns the per-episode rows in order.
pub fn simulate_episodes(
    model: &PomdpModel,
    policy: &AlphaPolicy,
    episodes: usize,
    horizon: Horizon,
    seed: u64,
) -> Result<Vec<EpisodeSummary>> {
    if episodes == 0 {
        return Err(Error::ParameterOutOfRange {
            name: "episodes",
            range: "[1,inf)",
            value: 0.0,
        });
    }
    policy.check_model(model)?;
    par::map_indexed(episodes, |i| {
        let mut rng = episode_rng(seed, i);
        let t = match horizon {
            Horizon::Fixed(t) => t,
            Horizon::Geometric => sample_horizon(model.discount(), &mut rng),
        };
        let ep = run_episode(model, policy, t, &mut rng)?;
        summarize(model, i, &ep)
    })
    .into_iter()
    .collect()
}

pub fn monte_carlo(
    model: &PomdpModel,
    policy: &AlphaPolicy,
    episodes: usize,
    horizon: Horizon,
    seed: u64,
) -> Result<CriteriaReport> {
    Ok(CriteriaReport::from_episodes(&simulate_episodes(
        model, policy, episodes, horizon, seed,
    )?))
}

/// Upper bound on `|G(pi, u)|` over the simplex.
pub fn stage_cost_bound(model: &PomdpModel) -> f64 {
    let g = model.discount();
    let ln = |n: usize| (n as f64).log2();
    let mut lin: f64 = 0.0;
    for x in 0..model.num_states() {
        for u in 0..model.num_actions() {
            lin = lin.max(((1.0 - g) * model.terminal_cost(x) + g * model.stage_cost(x, u)).abs());
        }
    }
    model.beta() * (1.0 + g) * ln(model.num_states()) + g * model.lambda() * ln(model.num_obs()) + lin
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountCheck {
    /// Mean of `sum_{k=0}^{T} G(pi_k, u_k)` with `T` geometric.
    pub geometric: Stat,
    /// Mean of `sum_{k<K} g^k G(pi_k, u_k)`.
    pub discounted: Stat,
    /// Standard error of the paired difference.
    pub difference_std_err: f64,
    /// `g^K max|G| / (1 - g)`.
    pub truncation_bound: f64,
}

impl DiscountCheck {
    pub fn agrees(&self, sigmas: f64) -> bool {
        (self.geometric.mean - self.discounted.mean).abs()
            <= sigmas * self.difference_std_err + self.truncation_bound
    }
}

/// Compares the geometric-horizon and discounted forms of the accumulated
/// `G` cost. Both sums are taken along the same simulated trajectory, with
/// `T` drawn from an independent substream.
pub fn geometric_discount_check(
    model: &PomdpModel,
    policy: &AlphaPolicy,
    truncation: usize,
    episodes: usize,
    seed: u64,
) -> Result<DiscountCheck> {
    if episodes == 0 {
        return Err(Error::ParameterOutOfRange {
            name: "episodes",
            range: "[1,inf)",
            value: 0.0,
        });
    }
    policy.check_model(model)?;
    let gamma = model.discount();
    let pairs: Vec<(f64, f64)> = par::map_indexed(episodes, |i| {
        let t = sample_horizon(gamma, &mut episode_rng(seed ^ 0x5851_f42d_4c95_7f2d, i));
        let mut rng = episode_rng(seed, i);
        let (mut x, y0) = model.sample_initial(&mut rng);
        let mut belief = model.initial_belief(y0)?;
        let (mut geo, mut disc, mut w) = (0.0, 0.0, 1.0);
        for k in 0..=t.max(truncation.saturating_sub(1)) {
            let u = policy.action(&belief);
            let g = stage_cost_g(model, &belief, u);
            if k <= t {
                geo += g;
            }
            if k < truncation {
                disc += w * g;
                w *= gamma;
            }
            let (xn, y) = model.sample_step(x, u, &mut rng);
            belief = model.filter_update(&belief, u, y)?;
            x = xn;
        }
        Ok((geo, disc))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let geo: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let disc: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(DiscountCheck {
        geometric: Stat::from_samples(&geo),
        discounted: Stat::from_samples(&disc),
        difference_std_err: Stat::from_samples(&diff).std_err,
        truncation_bound: gamma.powi(truncation as i32) * stage_cost_bound(model) / (1.0 - gamma),
    })
}
