//! Entropy-regularized POMDPs: Bayesian filtering, entropy stage costs and
//! their tangent-plane approximation, point-based value iteration, exact
//! entropy oracles and a Monte Carlo grid-world harness.

pub mod entropy;
pub mod error;
pub mod estimation;
pub mod format;
pub mod harness;
pub mod model;
pub mod par;
pub mod solver;

pub use entropy::{AlphaVector, PwlcApproximation, VectorTag};
pub use error::{Error, Result};
pub use model::{Belief, ModelFile, PomdpModel, TrajectoryRecord};
pub use solver::{solve, AlphaPolicy, SolverConfig};
