//! Surrogate losses, covariate-shift estimates, and exact divergence oracles.

mod bounds;
mod exact;

pub use bounds::{
    check_expectation_bound, check_noise_divergence, check_trajectory_loss_bound, BoundCheck,
    DivergenceOutcome, NoiseDivergenceReport,
};
pub use exact::{
    enumerate_distribution, enumerate_policy, eps_greedy_density, exact_kl, exact_tv,
    kl_by_policy_ratio, Divergence, EnumeratedDistribution, ENUMERATION_LIMIT,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Control, Dataset, NoiseParam, Policy, RolloutPolicy, SeedTree, Trajectory};
use crate::env::{action_log_density, Environment, Supervisor};
use crate::error::{Error, Result};
use crate::noise::{regularize_covariance, DENSITY_RIDGE};

/// Per-step surrogate loss `l(u_1, u_2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `|u_1 - u_2|^2`, optionally divided by `normalizer` and capped at 1.
    SquaredL2 {
        #[serde(default)]
        normalizer: Option<f64>,
    },
    /// 0 if the actions agree, else 1.
    ZeroOne,
}

impl LossSpec {
    pub fn squared() -> Self {
        LossSpec::SquaredL2 { normalizer: None }
    }

    pub fn for_env(env: &Environment) -> Self {
        if env.is_continuous() {
            Self::squared()
        } else {
            LossSpec::ZeroOne
        }
    }

    /// Whether every per-step value is guaranteed to lie in `[0, 1]`.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, LossSpec::SquaredL2 { normalizer: None })
    }

    pub fn step(&self, u1: &Control, u2: &Control) -> f64 {
        match (self, u1, u2) {
            (
                LossSpec::SquaredL2 { normalizer },
                Control::Continuous(a),
                Control::Continuous(b),
            ) => {
                let sq = (a - b).norm_squared();
                match normalizer {
                    Some(c) => (sq / c).min(1.0),
                    None => sq,
                }
            }
            (LossSpec::ZeroOne, Control::Discrete(a), Control::Discrete(b)) => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            (LossSpec::ZeroOne, Control::Continuous(a), Control::Continuous(b)) => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            _ => panic!("loss {self:?} does not apply to these controls"),
        }
    }
}

/// `J(theta_1, theta_2 | xi) = sum_{t < T} l(pi_1(x_t), pi_2(x_t))`.
pub fn trajectory_loss(
    p1: &dyn Policy,
    p2: &dyn Policy,
    traj: &Trajectory,
    loss: &LossSpec,
) -> f64 {
    traj.states[..traj.horizon()]
        .iter()
        .map(|x| loss.step(&p1.act(x), &p2.act(x)))
        .sum()
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, n }
    }
}

/// `E_{xi ~ behaviour} J(p1, p2 | xi)` from `m` rollouts; rollout `i` uses
/// `seeds.child(i)`.
#[allow(clippy::too_many_arguments)]
pub fn expected_loss(
    env: &Environment,
    behaviour: &RolloutPolicy<'_>,
    p1: &dyn Policy,
    p2: &dyn Policy,
    loss: &LossSpec,
    horizon: usize,
    m: usize,
    seeds: SeedTree,
) -> Result<Estimate> {
    let (losses, _) = sample_losses(env, behaviour, p1, p2, loss, horizon, m, seeds)?;
    Ok(Estimate::from_samples(&losses))
}

/// Like [`expected_loss`], also returning the behaviour's mean reward.
#[allow(clippy::too_many_arguments)]
pub fn expected_loss_and_reward(
    env: &Environment,
    behaviour: &RolloutPolicy<'_>,
    p1: &dyn Policy,
    p2: &dyn Policy,
    loss: &LossSpec,
    horizon: usize,
    m: usize,
    seeds: SeedTree,
) -> Result<(Estimate, Estimate)> {
    let (losses, rewards) = sample_losses(env, behaviour, p1, p2, loss, horizon, m, seeds)?;
    Ok((
        Estimate::from_samples(&losses),
        Estimate::from_samples(&rewards),
    ))
}

#[allow(clippy::too_many_arguments)]
fn sample_losses(
    env: &Environment,
    behaviour: &RolloutPolicy<'_>,
    p1: &dyn Policy,
    p2: &dyn Policy,
    loss: &LossSpec,
    horizon: usize,
    m: usize,
    seeds: SeedTree,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::Config("need at least one evaluation rollout".into()));
    }
    let pairs = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(i as u64).rng();
            let traj = behaviour.sample(env, horizon, &mut rng)?;
            Ok((trajectory_loss(p1, p2, &traj, loss), env.reward(&traj)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Loss of the robot on its own distribution versus on the collection
/// distribution, both measured as `J(theta_R, theta* | xi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub loss_on_robot_dist: f64,
    pub loss_on_collection_dist: f64,
    /// `loss_on_robot_dist - loss_on_collection_dist`.
    pub shift: f64,
    /// The loss term of the decomposition, evaluated on the collection distribution.
    pub standard_loss: f64,
    pub n_rollouts: usize,
    pub robot_stderr: f64,
    pub collection_stderr: f64,
}

impl ShiftReport {
    pub fn new(robot: Estimate, collection: Estimate) -> Self {
        ShiftReport {
            loss_on_robot_dist: robot.mean,
            loss_on_collection_dist: collection.mean,
            shift: robot.mean - collection.mean,
            standard_loss: collection.mean,
            n_rollouts: robot.n,
            robot_stderr: robot.stderr,
            collection_stderr: collection.stderr,
        }
    }
}

/// Shift between the deterministic robot's trajectory distribution and the
/// `psi`-noisy supervisor's. Robot rollouts use `seeds.child(0)`, supervisor
/// rollouts `seeds.child(1)`.
#[allow(clippy::too_many_arguments)]
pub fn covariate_shift(
    env: &Environment,
    sup: &Supervisor,
    psi: &NoiseParam,
    robot: &dyn Policy,
    loss: &LossSpec,
    horizon: usize,
    m: usize,
    seeds: SeedTree,
) -> Result<ShiftReport> {
    let on_robot = expected_loss(
        env,
        &RolloutPolicy::Deterministic(robot),
        robot,
        sup,
        loss,
        horizon,
        m,
        seeds.child(0),
    )?;
    let on_collection = expected_loss(
        env,
        &RolloutPolicy::noisy(env, sup, psi)?,
        robot,
        sup,
        loss,
        horizon,
        m,
        seeds.child(1),
    )?;
    Ok(ShiftReport::new(on_robot, on_collection))
}

/// Mean over held-out trajectories of `-sum_t log pi*(pi_hat(x_t) | x_t, psi)`.
///
/// Gaussian covariances get the standard density ridge first. A zero density
/// makes the objective `+inf`.
pub fn nll_objective(
    heldout: &Dataset,
    sup: &Supervisor,
    psi: &NoiseParam,
    robot: &dyn Policy,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out set for the likelihood objective"));
    }
    let psi = match psi {
        NoiseParam::Gaussian { sigma } => NoiseParam::Gaussian {
            sigma: regularize_covariance(sigma, DENSITY_RIDGE)?,
        },
        other => other.clone(),
    };
    let mut total = 0.0;
    for rec in &heldout.records {
        let ld = action_log_density(sup, &rec.state, &robot.act(&rec.state), &psi)?;
        if ld == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        total -= ld;
    }
    Ok(total / heldout.trajectory_count() as f64)
}
