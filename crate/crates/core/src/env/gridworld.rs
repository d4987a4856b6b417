use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{Rng, Trajectory};
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 4;

/// Action indices. The goal cell uses `UP` as its designated absorbing action.
pub mod action {
    pub const UP: usize = 0;
    pub const DOWN: usize = 1;
    pub const LEFT: usize = 2;
    pub const RIGHT: usize = 3;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    /// Uniform over every cell except the goal.
    #[default]
    UniformNonGoal,
    Fixed {
        x: usize,
        y: usize,
    },
}

/// Rectangular gridworld with an absorbing goal and slippery actions.
///
/// Cells are indexed `y * width + x`; `UP` increases `y`, `RIGHT` increases
/// `x`. With probability `slip` the executed action is replaced by a uniform
/// draw over all four actions, after which the move is clamped at the walls.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorldEnv {
    width: usize,
    height: usize,
    goal: usize,
    slip: f64,
    start: StartDistribution,
}

impl GridWorldEnv {
    pub fn new(
        width: usize,
        height: usize,
        goal: (usize, usize),
        slip: f64,
        start: StartDistribution,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(
                "gridworld must have at least one cell".into(),
            ));
        }
        if goal.0 >= width || goal.1 >= height {
            return Err(Error::Config(format!(
                "goal {goal:?} lies outside the {width}x{height} grid"
            )));
        }
        if !(0.0..1.0).contains(&slip) {
            return Err(Error::Config(format!(
                "slip probability must lie in [0, 1), got {slip}"
            )));
        }
        let goal_index = goal.1 * width + goal.0;
        match start {
            StartDistribution::Fixed { x, y } if x >= width || y >= height => {
                return Err(Error::Config(format!(
                    "start ({x}, {y}) lies outside the {width}x{height} grid"
                )))
            }
            StartDistribution::UniformNonGoal if width * height == 1 => {
                return Err(Error::Config(
                    "a 1-cell grid has no non-goal start cell; use a fixed start".into(),
                ))
            }
            _ => {}
        }
        Ok(GridWorldEnv {
            width,
            height,
            goal: goal_index,
            slip,
            start,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    /// Deterministic effect of executing `action` from `cell`.
    pub fn moved(&self, cell: usize, action: usize) -> usize {
        if cell == self.goal {
            return cell;
        }
        let (x, y) = self.coords(cell);
        let (nx, ny) = match action {
            action::UP => (x, (y + 1).min(self.height - 1)),
            action::DOWN => (x, y.saturating_sub(1)),
            action::LEFT => (x.saturating_sub(1), y),
            action::RIGHT => ((x + 1).min(self.width - 1), y),
            _ => (x, y),
        };
        self.cell(nx, ny)
    }

    /// Exact next-cell distribution, merged over coinciding outcomes and
    /// sorted by cell index.
    pub fn transition(&self, cell: usize, action: usize) -> Vec<(usize, f64)> {
        let mut probs = vec![0.0; self.num_cells()];
        probs[self.moved(cell, action)] += 1.0 - self.slip;
        if self.slip > 0.0 {
            for a in 0..NUM_ACTIONS {
                probs[self.moved(cell, a)] += self.slip / NUM_ACTIONS as f64;
            }
        }
        probs
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .collect()
    }

    pub fn initial_distribution(&self) -> Vec<(usize, f64)> {
        match self.start {
            StartDistribution::Fixed { x, y } => vec![(self.cell(x, y), 1.0)],
            StartDistribution::UniformNonGoal => {
                let n = (self.num_cells() - 1) as f64;
                (0..self.num_cells())
                    .filter(|&c| c != self.goal)
                    .map(|c| (c, 1.0 / n))
                    .collect()
            }
        }
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> usize {
        match self.start {
            StartDistribution::Fixed { x, y } => self.cell(x, y),
            StartDistribution::UniformNonGoal => {
                let k = rng.random_range(0..self.num_cells() - 1);
                if k >= self.goal {
                    k + 1
                } else {
                    k
                }
            }
        }
    }

    /// Samples a next cell. Always consumes one uniform and one action draw.
    pub fn step(&self, cell: usize, action: usize, rng: &mut Rng) -> usize {
        let coin: f64 = rng.random();
        let slipped = rng.random_range(0..NUM_ACTIONS);
        let executed = if coin < self.slip { slipped } else { action };
        self.moved(cell, executed)
    }

    /// 1 if the goal is visited within the horizon, else 0.
    pub fn reward(&self, traj: &Trajectory) -> f64 {
        let hit = traj.states.iter().any(|s| s.index() == Some(self.goal));
        if hit {
            1.0
        } else {
            0.0
        }
    }

    /// Shortest-path distance (in moves, ignoring slip) from every cell to the goal.
    pub fn goal_distances(&self) -> Vec<usize> {
        let (gx, gy) = self.coords(self.goal);
        (0..self.num_cells())
            .map(|c| {
                let (x, y) = self.coords(c);
                x.abs_diff(gx) + y.abs_diff(gy)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SeedTree;

    fn grid3() -> GridWorldEnv {
        GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap()
    }

    #[test]
    fn move_right_from_origin() {
        let g = grid3();
        let mut rng = SeedTree::new(0).rng();
        assert_eq!(g.step(g.cell(0, 0), action::RIGHT, &mut rng), g.cell(1, 0));
    }

    #[test]
    fn right_wall_clamps() {
        let g = grid3();
        let mut rng = SeedTree::new(0).rng();
        assert_eq!(g.step(g.cell(2, 0), action::RIGHT, &mut rng), g.cell(2, 0));
        assert_eq!(g.step(g.cell(0, 1), action::LEFT, &mut rng), g.cell(0, 1));
    }

    #[test]
    fn goal_absorbs() {
        let g = grid3();
        for a in 0..NUM_ACTIONS {
            assert_eq!(g.moved(g.goal(), a), g.goal());
        }
    }

    #[test]
    fn transition_sums_to_one() {
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.3, StartDistribution::UniformNonGoal).unwrap();
        for c in 0..g.num_cells() {
            for a in 0..NUM_ACTIONS {
                let total: f64 = g.transition(c, a).iter().map(|p| p.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        // corner, moving left: stays with 1 - rho + 2 rho / 4
        let t = g.transition(g.cell(0, 0), action::LEFT);
        let stay = t.iter().find(|p| p.0 == g.cell(0, 0)).unwrap().1;
        assert!((stay - (0.7 + 0.15)).abs() < 1e-12);
    }

    #[test]
    fn initial_never_goal() {
        let g = grid3();
        let mut rng = SeedTree::new(9).rng();
        let mut seen = [false; 9];
        for _ in 0..500 {
            let c = g.sample_initial(&mut rng);
            assert_ne!(c, g.goal());
            seen[c] = true;
        }
        assert_eq!(seen.iter().filter(|&&s| s).count(), 8);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(GridWorldEnv::new(3, 3, (3, 0), 0.0, StartDistribution::UniformNonGoal).is_err());
        assert!(GridWorldEnv::new(3, 3, (0, 0), 1.0, StartDistribution::UniformNonGoal).is_err());
        assert!(GridWorldEnv::new(1, 1, (0, 0), 0.0, StartDistribution::UniformNonGoal).is_err());
    }
}
