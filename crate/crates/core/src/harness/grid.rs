//! Grid-world localization model.
//!
//! Cells are numbered row-major from the top-left corner. Actions are
//! `N, S, E, W, Stay`; a move into a wall leaves the agent in place. Each
//! observation is a 4-bit wall-detection vector (bit 0 north, bit 1 south,
//! bit 2 east, bit 3 west) whose bits are independent given the cell.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelFile, PomdpModel};

pub const NUM_GRID_ACTIONS: usize = 5;
pub const NUM_GRID_OBS: usize = 16;
pub const STAY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    S,
    E,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::S, Direction::E, Direction::W];

    /// Index of the action moving this way and of the observation bit.
    pub fn index(self) -> usize {
        match self {
            Direction::N => 0,
            Direction::S => 1,
            Direction::E => 2,
            Direction::W => 3,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::S => Direction::N,
            Direction::E => Direction::W,
            Direction::W => Direction::E,
        }
    }
}

fn default_discount() -> f64 {
    0.99
}

/// Maze geometry and sensor model. The outer boundary is always walled;
/// `walls` lists interior edges as `(cell, direction)` and may name each
/// edge from either side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub width: usize,
    pub height: usize,
    pub goal: usize,
    /// Probability of detecting a wall that is not there.
    pub false_wall_prob: f64,
    /// Probability of missing a wall that is there.
    pub miss_prob: f64,
    #[serde(default)]
    pub walls: Vec<(usize, Direction)>,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

impl GridSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    fn neighbour(&self, cell: usize, d: Direction) -> Option<usize> {
        let (r, c) = (cell / self.width, cell % self.width);
        match d {
            Direction::N if r > 0 => Some(cell - self.width),
            Direction::S if r + 1 < self.height => Some(cell + self.width),
            Direction::E if c + 1 < self.width => Some(cell + 1),
            Direction::W if c > 0 => Some(cell - 1),
            _ => None,
        }
    }

    /// Symmetric set of blocked `(cell, direction)` pairs, outer boundary
    /// included.
    pub fn blocked_edges(&self) -> Result<BTreeSet<(usize, Direction)>> {
        let n = self.num_cells();
        let mut set = BTreeSet::new();
        for cell in 0..n {
            for d in Direction::ALL {
                if self.neighbour(cell, d).is_none() {
                    set.insert((cell, d));
                }
            }
        }
        for &(cell, d) in &self.walls {
            if cell >= n {
                return Err(Error::InvalidGrid(format!("wall references cell {cell} outside the {n}-cell grid")));
            }
            set.insert((cell, d));
            if let Some(other) = self.neighbour(cell, d) {
                set.insert((other, d.opposite()));
            }
        }
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        if self.goal >= self.num_cells() {
            return Err(Error::InvalidGrid(format!("goal {} outside grid", self.goal)));
        }
        for (name, p) in [("false_wall_prob", self.false_wall_prob), ("miss_prob", self.miss_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ParameterOutOfRange {
                    name,
                    range: "[0,1]",
                    value: p,
                });
            }
        }
        Ok(())
    }
}

/// Builds the grid-world model with `beta = lambda = 0`; use
/// [`PomdpModel::with_weights`] to set the entropy weights.
pub fn build_gridworld(spec: &GridSpec) -> Result<PomdpModel> {
    spec.validate()?;
    let blocked = spec.blocked_edges()?;
    let n = spec.num_cells();

    let mut transition = vec![vec![vec![0.0; n]; n]; NUM_GRID_ACTIONS];
    for cell in 0..n {
        for d in Direction::ALL {
            let to = if blocked.contains(&(cell, d)) {
                cell
            } else {
                spec.neighbour(cell, d).unwrap_or(cell)
            };
            transition[d.index()][cell][to] = 1.0;
        }
        transition[STAY][cell][cell] = 1.0;
    }

    let obs_rows: Vec<Vec<f64>> = (0..n)
        .map(|cell| {
            (0..NUM_GRID_OBS)
                .map(|y| {
                    Direction::ALL
                        .iter()
                        .map(|&d| {
                            let detect = if blocked.contains(&(cell, d)) {
                                1.0 - spec.miss_prob
                            } else {
                                spec.false_wall_prob
                            };
                            if y >> d.index() & 1 == 1 {
                                detect
                            } else {
                                1.0 - detect
                            }
                        })
                        .product()
                })
                .collect()
        })
        .collect();

    let stage_cost = (0..n)
        .map(|x| vec![if x == spec.goal { 0.0 } else { 1.0 }; NUM_GRID_ACTIONS])
        .collect();

    PomdpModel::from_file(ModelFile {
        description: spec.description.clone(),
        num_states: n,
        num_actions: NUM_GRID_ACTIONS,
        num_obs: NUM_GRID_OBS,
        transition,
        observation: vec![obs_rows.clone(); NUM_GRID_ACTIONS],
        initial_observation: obs_rows,
        prior: vec![1.0 / n as f64; n],
        stage_cost,
        terminal_cost: vec![0.0; n],
        discount: spec.discount,
        beta: 0.0,
        lambda: 0.0,
    })
}
