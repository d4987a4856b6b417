use std::collections::BTreeMap;

use crate::domain::{Control, Policy, State, Trajectory};
use crate::env::{GridWorldEnv, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Largest admissible `K^T * |initial states|`.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Exact trajectory distribution of a finite MDP. Keys are
/// `[x_0, u_0, x_1, u_1, ..., x_T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedDistribution {
    pub horizon: usize,
    pub probs: BTreeMap<Vec<usize>, f64>,
}

impl EnumeratedDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn prob(&self, key: &[usize]) -> f64 {
        self.probs.get(key).copied().unwrap_or(0.0)
    }

    pub fn expectation(&self, f: impl Fn(&[usize]) -> f64) -> f64 {
        self.probs.iter().map(|(k, p)| p * f(k)).sum()
    }

    /// Rebuilds the trajectory stored under `key`.
    pub fn trajectory(key: &[usize]) -> Trajectory {
        let states = key.iter().step_by(2).map(|&c| State::Discrete(c)).collect();
        let controls = key
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&a| Control::Discrete(a))
            .collect();
        Trajectory::new(states, controls).expect("keys alternate states and controls")
    }
}

/// `p(xi) = p(x_0) prod_t pi(u_t | x_t) p(x_{t+1} | x_t, u_t)` for every
/// trajectory of positive probability. `act_density(x)` lists `(action, prob)`.
pub fn enumerate_distribution<F>(
    grid: &GridWorldEnv,
    act_density: F,
    horizon: usize,
) -> Result<EnumeratedDistribution>
where
    F: Fn(usize) -> Vec<(usize, f64)>,
{
    let init = grid.initial_distribution();
    let count = (NUM_ACTIONS as u128)
        .checked_pow(horizon as u32)
        .and_then(|n| n.checked_mul(init.len() as u128))
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let policy: Vec<Vec<(usize, f64)>> = (0..grid.num_cells()).map(&act_density).collect();
    let mut probs = BTreeMap::new();
    let mut key = Vec::with_capacity(2 * horizon + 1);
    for (x0, p0) in init {
        key.push(x0);
        expand(grid, &policy, horizon, p0, &mut key, &mut probs);
        key.pop();
    }
    Ok(EnumeratedDistribution { horizon, probs })
}

fn expand(
    grid: &GridWorldEnv,
    policy: &[Vec<(usize, f64)>],
    remaining: usize,
    prob: f64,
    key: &mut Vec<usize>,
    out: &mut BTreeMap<Vec<usize>, f64>,
) {
    if remaining == 0 {
        *out.entry(key.clone()).or_insert(0.0) += prob;
        return;
    }
    let x = *key.last().unwrap();
    for &(u, pu) in &policy[x] {
        if pu <= 0.0 {
            continue;
        }
        key.push(u);
        for (next, pn) in grid.transition(x, u) {
            key.push(next);
            expand(grid, policy, remaining - 1, prob * pu * pn, key, out);
            key.pop();
        }
        key.pop();
    }
}

/// Epsilon-greedy action probabilities around `preferred`, zero entries omitted.
pub fn eps_greedy_density(preferred: usize, eps: f64, actions: usize) -> Vec<(usize, f64)> {
    (0..actions)
        .map(|a| {
            let p = if a == preferred {
                1.0 - eps
            } else {
                eps / (actions as f64 - 1.0)
            };
            (a, p)
        })
        .filter(|&(_, p)| p > 0.0)
        .collect()
}

fn preferred(policy: &dyn Policy, cell: usize) -> usize {
    policy
        .act(&State::Discrete(cell))
        .index()
        .expect("grid policies emit discrete controls")
}

/// Trajectory distribution of `policy` with epsilon-greedy noise (`eps = 0`
/// is the deterministic policy).
pub fn enumerate_policy(
    grid: &GridWorldEnv,
    policy: &dyn Policy,
    eps: f64,
    horizon: usize,
) -> Result<EnumeratedDistribution> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::OutOfRange(format!(
            "eps must lie in [0, 1), got {eps}"
        )));
    }
    enumerate_distribution(
        grid,
        |x| eps_greedy_density(preferred(policy, x), eps, NUM_ACTIONS),
        horizon,
    )
}

/// Divergence value with a distinguished infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(&self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            Divergence::Finite(v) => *v,
            Divergence::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Divergence::Finite(v) => write!(f, "{v:.6}"),
            Divergence::Infinite => f.write_str("inf"),
        }
    }
}

/// `KL(P || Q) = sum_xi p log(p / q)`.
pub fn exact_kl(p: &EnumeratedDistribution, q: &EnumeratedDistribution) -> Divergence {
    let mut total = 0.0;
    for (key, &pk) in &p.probs {
        if pk <= 0.0 {
            continue;
        }
        let qk = q.prob(key);
        if qk <= 0.0 {
            return Divergence::Infinite;
        }
        total += pk * (pk / qk).ln();
    }
    Divergence::Finite(total.max(0.0))
}

/// `KL(P || Q)` for two policies on the same MDP as
/// `E_P sum_t log(pi_a(u_t|x_t) / pi_b(u_t|x_t))`; the dynamics cancel.
/// `p` must have been enumerated from `density_a`.
pub fn kl_by_policy_ratio<A, B>(
    p: &EnumeratedDistribution,
    density_a: A,
    density_b: B,
) -> Divergence
where
    A: Fn(usize) -> Vec<(usize, f64)>,
    B: Fn(usize) -> Vec<(usize, f64)>,
{
    let lookup =
        |table: &[(usize, f64)], u: usize| table.iter().find(|e| e.0 == u).map_or(0.0, |e| e.1);
    let mut total = 0.0;
    for (key, &pk) in &p.probs {
        for step in key.chunks(2).take(p.horizon) {
            let (x, u) = (step[0], step[1]);
            let pa = lookup(&density_a(x), u);
            let pb = lookup(&density_b(x), u);
            if pb <= 0.0 {
                return Divergence::Infinite;
            }
            total += pk * (pa / pb).ln();
        }
    }
    Divergence::Finite(total.max(0.0))
}

/// `1/2 sum |p - q|` over the union of supports.
pub fn exact_tv(p: &EnumeratedDistribution, q: &EnumeratedDistribution) -> f64 {
    let mut total = 0.0;
    for (key, &pk) in &p.probs {
        total += (pk - q.prob(key)).abs();
    }
    for (key, &qk) in &q.probs {
        if !p.probs.contains_key(key) {
            total += qk;
        }
    }
    0.5 * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PolicyParams;
    use crate::env::StartDistribution;

    fn one_cell() -> GridWorldEnv {
        GridWorldEnv::new(1, 2, (0, 1), 0.0, StartDistribution::Fixed { x: 0, y: 0 }).unwrap()
    }

    fn grid(slip: f64) -> GridWorldEnv {
        GridWorldEnv::new(3, 3, (2, 2), slip, StartDistribution::UniformNonGoal).unwrap()
    }

    fn constant(a: usize) -> PolicyParams {
        PolicyParams::DiscreteTabular {
            actions: vec![],
            default_action: a,
        }
    }

    #[test]
    fn two_action_uniform_policy() {
        // LEFT and RIGHT both leave the start cell in place
        let g = one_cell();
        let d = enumerate_distribution(&g, |_| vec![(2, 0.5), (3, 0.5)], 1).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.prob(&[0, 2, 0]), 0.5);
        assert_eq!(d.prob(&[0, 3, 0]), 0.5);
    }

    #[test]
    fn deterministic_policy_has_one_trajectory() {
        let g =
            GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::Fixed { x: 0, y: 0 }).unwrap();
        let d = enumerate_policy(&g, &constant(3), 0.0, 4).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.total_mass(), 1.0);
    }

    #[test]
    fn mass_is_one_with_slip() {
        let d = enumerate_policy(&grid(0.1), &constant(0), 0.2, 4).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn size_guard() {
        let err = enumerate_policy(&grid(0.0), &constant(0), 0.0, 10).unwrap_err();
        assert!(matches!(err, Error::SizeGuard { .. }));
    }

    #[test]
    fn kl_examples() {
        let g = one_cell();
        let robot = enumerate_distribution(&g, |_| vec![(2, 1.0)], 1).unwrap();
        let noisy = enumerate_distribution(&g, |_| vec![(2, 0.5), (3, 0.5)], 1).unwrap();
        let other = enumerate_distribution(&g, |_| vec![(3, 1.0)], 1).unwrap();
        let kl = exact_kl(&robot, &noisy).value();
        assert!((kl - 2f64.ln()).abs() < 1e-12);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-4);
        assert_eq!(exact_kl(&robot, &other), Divergence::Infinite);
        assert_eq!(exact_kl(&noisy, &noisy), Divergence::Finite(0.0));
    }

    #[test]
    fn tv_examples() {
        let g = one_cell();
        let a = enumerate_distribution(&g, |_| vec![(2, 1.0)], 1).unwrap();
        let b = enumerate_distribution(&g, |_| vec![(3, 1.0)], 1).unwrap();
        let u = enumerate_distribution(&g, |_| vec![(2, 0.5), (3, 0.5)], 1).unwrap();
        assert_eq!(exact_tv(&a, &a), 0.0);
        assert_eq!(exact_tv(&a, &b), 1.0);
        assert_eq!(exact_tv(&a, &u), 0.5);
    }

    #[test]
    fn kl_two_ways_and_pinsker() {
        let g = grid(0.1);
        let sup = crate::env::Supervisor::scripted(&g);
        let robot = constant(0);
        for (ea, eb) in [(0.1, 0.3), (0.3, 0.1), (0.05, 0.6), (0.2, 0.2)] {
            let da = |x| eps_greedy_density(preferred(&robot, x), ea, NUM_ACTIONS);
            let db = |x| eps_greedy_density(preferred(&sup, x), eb, NUM_ACTIONS);
            let p = enumerate_distribution(&g, da, 3).unwrap();
            let q = enumerate_distribution(&g, db, 3).unwrap();
            let direct = exact_kl(&p, &q).value();
            let ratio = kl_by_policy_ratio(&p, da, db).value();
            assert!((direct - ratio).abs() < 1e-10, "{direct} vs {ratio}");
            assert!(exact_tv(&p, &q) <= (direct / 2.0).sqrt() + 1e-12);
        }
    }

    #[test]
    fn gibbs_inequality() {
        let g = grid(0.0);
        let p = enumerate_policy(&g, &constant(1), 0.3, 3).unwrap();
        let q = enumerate_policy(&g, &constant(1), 0.4, 3).unwrap();
        assert!(exact_kl(&p, &q).value() > 0.0);
        assert!(exact_kl(&p, &p).value().abs() < 1e-10);
    }

    #[test]
    fn trajectory_round_trip() {
        let t = EnumeratedDistribution::trajectory(&[0, 3, 1, 0, 4]);
        assert_eq!(t.horizon(), 2);
        assert_eq!(t.states[2], State::Discrete(4));
        assert_eq!(t.controls[0], Control::Discrete(3));
    }
}
