use rand::Rng as _;
use rayon::prelude::*;

use super::dataset::{Dataset, DatasetMeta, Record};
use super::rng::{Rng, SeedTree};
use super::types::{Control, NoiseParam, Policy, State, Trajectory};
use crate::env::{Environment, NoiseSampler, Supervisor};
use crate::error::{Error, Result};

/// Samples `x_0 ~ p(x_0)`, `u_t ~ act(x_t)`, `x_{t+1} ~ p(. | x_t, u_t)` for
/// `horizon` steps.
pub fn rollout<F>(
    env: &Environment,
    horizon: usize,
    rng: &mut Rng,
    mut act: F,
) -> Result<Trajectory>
where
    F: FnMut(&State, &mut Rng) -> Result<Control>,
{
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let space = env.control_space();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = env.sample_initial(rng);
    for _ in 0..horizon {
        let u = act(&x, rng)?;
        space.check(&u)?;
        let next = env.step(&x, &u, rng)?;
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    states.push(x);
    Trajectory::new(states, controls)
}

/// Rollout of a deterministic policy.
pub fn rollout_policy(
    env: &Environment,
    policy: &impl Policy,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    rollout(env, horizon, rng, |x, _| Ok(policy.act(x)))
}

/// Behaviour that generates trajectories.
#[derive(Clone)]
pub enum RolloutPolicy<'a> {
    Deterministic(&'a dyn Policy),
    /// `pi*(. | x, psi)`.
    NoisySupervisor {
        sup: &'a Supervisor,
        sampler: NoiseSampler,
    },
    /// At every step: the supervisor with probability `beta`, else the robot.
    /// One uniform is drawn per step either way.
    Mixture {
        sup: &'a Supervisor,
        robot: &'a dyn Policy,
        beta: f64,
    },
}

impl<'a> RolloutPolicy<'a> {
    pub fn noisy(env: &Environment, sup: &'a Supervisor, psi: &NoiseParam) -> Result<Self> {
        Ok(RolloutPolicy::NoisySupervisor {
            sup,
            sampler: NoiseSampler::new(psi, env.control_space())?,
        })
    }

    pub fn sample(&self, env: &Environment, horizon: usize, rng: &mut Rng) -> Result<Trajectory> {
        match self {
            RolloutPolicy::Deterministic(p) => rollout(env, horizon, rng, |x, _| Ok(p.act(x))),
            RolloutPolicy::NoisySupervisor { sup, sampler } => {
                rollout(env, horizon, rng, |x, rng| {
                    Ok(sampler.perturb(&sup.act(x), rng))
                })
            }
            RolloutPolicy::Mixture { sup, robot, beta } => rollout(env, horizon, rng, |x, rng| {
                let coin: f64 = rng.random();
                Ok(if coin < *beta {
                    sup.act(x)
                } else {
                    robot.act(x)
                })
            }),
        }
    }
}

/// Demonstrations from the noise-injected supervisor.
#[derive(Clone, Debug)]
pub struct Collection {
    /// Visited states labelled with the noiseless supervisor control.
    pub dataset: Dataset,
    /// Executed trajectories (controls include the noise).
    pub trajectories: Vec<Trajectory>,
    /// Cumulative environment reward of each rollout.
    pub rewards: Vec<f64>,
}

impl Collection {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Labels every state of `trajectories` with `sup`.
pub fn label_trajectories(
    sup: &Supervisor,
    trajectories: &[Trajectory],
    iteration: usize,
    first_id: usize,
    meta: DatasetMeta,
) -> Dataset {
    let mut dataset = Dataset::new(meta);
    for (i, traj) in trajectories.iter().enumerate() {
        for (t, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
            dataset.records.push(Record {
                iteration,
                trajectory_id: first_id + i,
                t,
                state: x.clone(),
                label: sup.act(x),
                executed: u.clone(),
            });
        }
    }
    dataset
}

/// `n` rollouts of `behaviour`, every visited state labelled by `sup`.
/// Trajectory `i` draws from `seeds.child(i)`, so results do not depend on
/// execution order.
pub fn collect_rollouts(
    env: &Environment,
    sup: &Supervisor,
    behaviour: &RolloutPolicy<'_>,
    n: usize,
    horizon: usize,
    iteration: usize,
    seeds: SeedTree,
) -> Result<Collection> {
    if n == 0 {
        return Err(Error::Config("need at least one demonstration".into()));
    }
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| behaviour.sample(env, horizon, &mut seeds.child(i as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    let rewards = trajectories.iter().map(|t| env.reward(t)).collect();
    let meta = DatasetMeta {
        env_id: env.id(),
        horizon,
        seed: seeds.seed(),
        noise_history: vec![],
    };
    let dataset = label_trajectories(sup, &trajectories, iteration, 0, meta);
    Ok(Collection {
        dataset,
        trajectories,
        rewards,
    })
}

/// `n` rollouts of `pi*(. | x, psi)`.
pub fn collect_demonstrations(
    env: &Environment,
    sup: &Supervisor,
    psi: &NoiseParam,
    n: usize,
    horizon: usize,
    iteration: usize,
    seeds: SeedTree,
) -> Result<Collection> {
    let behaviour = RolloutPolicy::noisy(env, sup, psi)?;
    let mut c = collect_rollouts(env, sup, &behaviour, n, horizon, iteration, seeds)?;
    c.dataset.meta.noise_history.push(psi.clone());
    Ok(c)
}
