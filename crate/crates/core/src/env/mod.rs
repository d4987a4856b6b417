//! Benchmark environments, their algorithmic supervisors, and noise-injected
//! supervisor actions.

mod gridworld;
mod pointmass;
mod supervisor;

pub use gridworld::{action, GridWorldEnv, StartDistribution, NUM_ACTIONS};
pub use pointmass::LinearPointMassEnv;
pub use supervisor::{
    action_log_density, lqr_gain, noisy_supervisor_act, riccati_fixed_point, supervisor_act,
    NoiseSampler, Supervisor, RICCATI_MAX_ITERS, RICCATI_TOL,
};

pub(crate) use pointmass::standard_normal;

use crate::domain::{Control, ControlSpace, Rng, State, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    PointMass(LinearPointMassEnv),
    Grid(GridWorldEnv),
}

impl Environment {
    pub fn id(&self) -> String {
        match self {
            Environment::PointMass(e) => {
                format!("pointmass-{}x{}", e.state_dim(), e.control_dim())
            }
            Environment::Grid(g) => format!("gridworld-{}x{}", g.width(), g.height()),
        }
    }

    pub fn control_space(&self) -> ControlSpace {
        match self {
            Environment::PointMass(e) => ControlSpace::Continuous {
                dim: e.control_dim(),
            },
            Environment::Grid(_) => ControlSpace::Discrete {
                actions: NUM_ACTIONS,
            },
        }
    }

    /// `d_x` for continuous environments, the number of cells for grids.
    pub fn state_dim(&self) -> usize {
        match self {
            Environment::PointMass(e) => e.state_dim(),
            Environment::Grid(g) => g.num_cells(),
        }
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> State {
        match self {
            Environment::PointMass(e) => State::Continuous(e.sample_initial(rng)),
            Environment::Grid(g) => State::Discrete(g.sample_initial(rng)),
        }
    }

    /// One transition `x' ~ p(. | x, u)`.
    pub fn step(&self, x: &State, u: &Control, rng: &mut Rng) -> Result<State> {
        match (self, x, u) {
            (Environment::PointMass(e), State::Continuous(x), Control::Continuous(u)) => {
                if u.len() != e.control_dim() {
                    return Err(Error::Dimension {
                        context: "control",
                        expected: e.control_dim(),
                        got: u.len(),
                    });
                }
                Ok(State::Continuous(e.step(x, u, rng)))
            }
            (Environment::Grid(g), State::Discrete(s), Control::Discrete(a)) => {
                if *a >= NUM_ACTIONS {
                    return Err(Error::OutOfRange(format!(
                        "action {a} outside 0..{NUM_ACTIONS}"
                    )));
                }
                Ok(State::Discrete(g.step(*s, *a, rng)))
            }
            _ => Err(Error::Config(
                "state/control type does not match the environment".into(),
            )),
        }
    }

    pub fn reward(&self, traj: &Trajectory) -> f64 {
        match self {
            Environment::PointMass(e) => e.reward(traj),
            Environment::Grid(g) => g.reward(traj),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, Environment::PointMass(_))
    }
}
