//! Fixed-seed numerical checks of the bounds and closed forms.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::Serialize;

use crate::domain::{
    collect_demonstrations, tag, Control, Dataset, DatasetMeta, NoiseParam, Policy, PolicyParams,
    Record, Rng, SeedTree, State,
};
use crate::env::{
    Environment, GridWorldEnv, LinearPointMassEnv, StartDistribution, Supervisor, NUM_ACTIONS,
};
use crate::error::Result;
use crate::metrics::{
    check_expectation_bound, check_noise_divergence, check_trajectory_loss_bound,
    enumerate_distribution, eps_greedy_density, exact_kl, exact_tv, kl_by_policy_ratio,
    nll_objective, Divergence, DivergenceOutcome, LossSpec,
};
use crate::noise::{
    expected_gaussian_deviation, mle_epsilon, mle_gaussian, shrink_gaussian, Shrinkage,
};

const ORACLE_SEED: u64 = 20_170_301;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<20} {:>14} {:>14}  {:<6} detail",
            "check", "lhs", "rhs", "result"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<20} {:>14.6e} {:>14.6e}  {:<6} {}",
                c.name,
                c.lhs,
                c.rhs,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Replaceable pieces, for fault-injection tests of the suite itself.
#[derive(Clone, Copy)]
pub struct OracleHooks {
    pub shrink: fn(&DMatrix<f64>, f64, usize) -> Result<Shrinkage>,
}

impl Default for OracleHooks {
    fn default() -> Self {
        OracleHooks {
            shrink: shrink_gaussian,
        }
    }
}

pub fn run_oracle_suite() -> Result<OracleReport> {
    run_oracle_suite_with(&OracleHooks::default())
}

pub fn run_oracle_suite_with(hooks: &OracleHooks) -> Result<OracleReport> {
    let seeds = SeedTree::new(ORACLE_SEED).child(tag::ORACLE);
    let mut checks = Vec::new();
    checks.extend(divergence_checks(seeds.child(1))?);
    checks.push(expectation_bound_check(seeds.child(2))?);
    checks.extend(noise_divergence_checks()?);
    checks.push(gaussian_mle_check(seeds.child(3))?);
    checks.push(epsilon_mle_check(seeds.child(4))?);
    checks.push(shrink_check(hooks, seeds.child(5))?);
    checks.push(deviation_check(seeds.child(6))?);
    Ok(OracleReport { checks })
}

fn grid() -> GridWorldEnv {
    GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).expect("valid grid")
}

fn random_table(rng: &mut Rng, cells: usize) -> PolicyParams {
    PolicyParams::DiscreteTabular {
        actions: (0..cells)
            .map(|_| Some(rng.random_range(0..NUM_ACTIONS)))
            .collect(),
        default_action: 0,
    }
}

fn preferred(p: &dyn Policy, cell: usize) -> usize {
    p.act(&State::Discrete(cell))
        .index()
        .expect("discrete policy")
}

/// Trajectory-loss bound, Pinsker, and the two routes to the KL on random
/// epsilon-greedy policy pairs.
fn divergence_checks(seeds: SeedTree) -> Result<Vec<OracleCheck>> {
    let g = grid();
    let mut rng = seeds.rng();
    let (mut worst_l1, mut worst_pinsker, mut worst_route) = (
        (0.0, 0.0, f64::NEG_INFINITY),
        (0.0, 0.0, f64::NEG_INFINITY),
        0.0f64,
    );
    let (mut ok_l1, mut ok_pinsker) = (true, true);
    let pairs = 200;
    for _ in 0..pairs {
        let robot = random_table(&mut rng, g.num_cells());
        let sup = random_table(&mut rng, g.num_cells());
        let eps_p = if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..0.5)
        };
        let eps_q = rng.random_range(0.05..0.9);
        let da = |x| eps_greedy_density(preferred(&robot, x), eps_p, NUM_ACTIONS);
        let db = |x| eps_greedy_density(preferred(&sup, x), eps_q, NUM_ACTIONS);
        let p = enumerate_distribution(&g, da, 4)?;
        let q = enumerate_distribution(&g, db, 4)?;
        let c = check_trajectory_loss_bound(&p, &q, &robot, &sup, &LossSpec::ZeroOne)?;
        ok_l1 &= c.holds;
        if c.lhs - c.rhs > worst_l1.2 {
            worst_l1 = (c.lhs, c.rhs, c.lhs - c.rhs);
        }
        let kl = exact_kl(&p, &q);
        if let Divergence::Finite(v) = kl {
            let tv = exact_tv(&p, &q);
            let bound = (v / 2.0).sqrt();
            ok_pinsker &= tv <= bound + 1e-12;
            if tv - bound > worst_pinsker.2 {
                worst_pinsker = (tv, bound, tv - bound);
            }
            if let Divergence::Finite(r) = kl_by_policy_ratio(&p, da, db) {
                worst_route = worst_route.max((v - r).abs());
            } else {
                worst_route = f64::INFINITY;
            }
        }
    }
    Ok(vec![
        OracleCheck {
            name: "trajectory_bound",
            lhs: worst_l1.0,
            rhs: worst_l1.1,
            passed: ok_l1,
            detail: format!("{pairs} policy pairs, 3x3 grid, T=4; tightest instance shown"),
        },
        OracleCheck {
            name: "pinsker",
            lhs: worst_pinsker.0,
            rhs: worst_pinsker.1,
            passed: ok_pinsker,
            detail: "TV <= sqrt(KL/2); tightest instance shown".into(),
        },
        OracleCheck {
            name: "kl_two_routes",
            lhs: worst_route,
            rhs: 1e-10,
            passed: worst_route <= 1e-10,
            detail: "|KL by enumeration - E_P sum log policy ratio|, worst case".into(),
        },
    ])
}

fn expectation_bound_check(seeds: SeedTree) -> Result<OracleCheck> {
    let mut rng = seeds.rng();
    let mut ok = true;
    let mut tightest = (0.0, 0.0, f64::NEG_INFINITY);
    let triples = 200;
    for i in 0..triples {
        let bound = if i % 2 == 0 { 1.0 } else { 5.0 };
        let p = random_simplex(&mut rng, 10);
        let q = random_simplex(&mut rng, 10);
        let f: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..=bound)).collect();
        let c = check_expectation_bound(&p, &q, &f, bound)?;
        ok &= c.holds;
        if c.lhs - c.rhs > tightest.2 {
            tightest = (c.lhs, c.rhs, c.lhs - c.rhs);
        }
    }
    Ok(OracleCheck {
        name: "expectation_bound",
        lhs: tightest.0,
        rhs: tightest.1,
        passed: ok,
        detail: format!("{triples} random (P, Q, f) on 10 points, B in {{1, 5}}"),
    })
}

fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|_| -rng.random::<f64>().max(1e-300).ln())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn noise_divergence_checks() -> Result<Vec<OracleCheck>> {
    let g = grid();
    let sup = Supervisor::scripted(&g);
    let robot = PolicyParams::DiscreteTabular {
        actions: vec![],
        default_action: crate::env::action::LEFT,
    };
    let r = check_noise_divergence(&g, &sup, &robot, 0.1, 4)?;
    let same = check_noise_divergence(&g, &sup, &sup, 0.1, 4)?;
    Ok(vec![
        OracleCheck {
            name: "noise_keeps_kl_finite",
            lhs: r.kl_noisy.value(),
            rhs: r.kl_clean.value(),
            passed: r.outcome == DivergenceOutcome::Confirmed,
            detail: format!(
                "KL to eps=0.1 supervisor vs noiseless; robot error {:.4}",
                r.robot_error
            ),
        },
        OracleCheck {
            name: "premise_detection",
            lhs: same.robot_error,
            rhs: 0.0,
            passed: same.outcome == DivergenceOutcome::PremiseViolated,
            detail: "robot = supervisor is reported as premise violated".into(),
        },
    ])
}

/// Held-out set whose supervisor outputs zero, so deviations are `W x`.
fn gaussian_instance(rng: &mut Rng) -> (Dataset, Supervisor, PolicyParams) {
    let sup = Supervisor::Lqr {
        gain: DMatrix::zeros(2, 2),
    };
    let robot = PolicyParams::ContinuousLinear {
        weights: DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)),
        bias: DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5)),
        features: Default::default(),
    };
    let (trajectories, horizon) = (3, 8);
    let mut ds = Dataset::new(DatasetMeta {
        env_id: "synthetic".into(),
        horizon,
        seed: 0,
        noise_history: vec![],
    });
    for id in 0..trajectories {
        for t in 0..horizon {
            let state = State::Continuous(DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)));
            ds.records.push(Record {
                iteration: 0,
                trajectory_id: id,
                t,
                label: sup.act(&state),
                executed: sup.act(&state),
                state,
            });
        }
    }
    (ds, sup, robot)
}

fn gaussian_mle_check(seeds: SeedTree) -> Result<OracleCheck> {
    let mut rng = seeds.rng();
    let (ds, sup, robot) = gaussian_instance(&mut rng);
    let sigma_hat = mle_gaussian(&ds, &robot)?;
    let at_hat = nll_objective(&ds, &sup, &NoiseParam::gaussian(sigma_hat.clone())?, &robot)?;
    let mut best = f64::INFINITY;
    for _ in 0..100 {
        let a =
            DMatrix::identity(2, 2) + DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.3..0.3));
        let s = &a * &sigma_hat * a.transpose();
        let psi = NoiseParam::gaussian((&s + s.transpose()) * 0.5)?;
        best = best.min(nll_objective(&ds, &sup, &psi, &robot)?);
    }
    Ok(OracleCheck {
        name: "gaussian_mle",
        lhs: at_hat,
        rhs: best,
        passed: at_hat <= best + 1e-9,
        detail: "NLL at the closed form vs best of 100 PD perturbations".into(),
    })
}

fn epsilon_mle_check(seeds: SeedTree) -> Result<OracleCheck> {
    let g = GridWorldEnv::new(3, 3, (2, 2), 0.1, StartDistribution::UniformNonGoal)?;
    let env = Environment::Grid(g.clone());
    let sup = Supervisor::scripted(&g);
    let c = collect_demonstrations(
        &env,
        &sup,
        &NoiseParam::EpsGreedy { eps: 0.2 },
        6,
        5,
        0,
        seeds,
    )?;
    let mut rng = seeds.child(1).rng();
    let robot = random_table(&mut rng, g.num_cells());
    let eps_hat = mle_epsilon(&c.dataset, &robot, NUM_ACTIONS)?;
    let cap = crate::noise::eps_cap(NUM_ACTIONS);
    let mut best = (f64::INFINITY, 0.0);
    let steps = (cap / 1e-4).floor() as usize;
    for i in 1..=steps {
        let eps = i as f64 * 1e-4;
        let v = nll_objective(&c.dataset, &sup, &NoiseParam::EpsGreedy { eps }, &robot)?;
        if v < best.0 {
            best = (v, eps);
        }
    }
    Ok(OracleCheck {
        name: "epsilon_mle",
        lhs: eps_hat,
        rhs: best.1,
        passed: (eps_hat - best.1).abs() <= 1e-4,
        detail: "closed form vs argmin over a 1e-4 grid".into(),
    })
}

fn shrink_check(hooks: &OracleHooks, seeds: SeedTree) -> Result<OracleCheck> {
    let mut rng = seeds.rng();
    let mut worst = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let sigma_hat = &g * g.transpose();
        let alpha = rng.random_range(0.01..50.0);
        let horizon = rng.random_range(1..100);
        let s = (hooks.shrink)(&sigma_hat, alpha, horizon)?;
        let achieved = expected_gaussian_deviation(&s.sigma, horizon);
        let rel = (achieved - alpha).abs() / alpha;
        if rel >= worst.2 {
            worst = (achieved, alpha, rel);
        }
    }
    Ok(OracleCheck {
        name: "shrink_identity",
        lhs: worst.0,
        rhs: worst.1,
        passed: worst.2 <= 1e-9,
        detail: format!(
            "T tr(Sigma_alpha) vs alpha, worst relative error {:.2e}",
            worst.2
        ),
    })
}

fn deviation_check(seeds: SeedTree) -> Result<OracleCheck> {
    let env = Environment::PointMass(LinearPointMassEnv::double_integrator());
    let sup = Supervisor::for_env(&env)?;
    let sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let horizon = 10;
    let n = 4000;
    let c = collect_demonstrations(
        &env,
        &sup,
        &NoiseParam::gaussian(sigma.clone())?,
        n,
        horizon,
        0,
        seeds,
    )?;
    let total: f64 = c
        .dataset
        .records
        .iter()
        .map(|r| match (&r.executed, &r.label) {
            (Control::Continuous(u), Control::Continuous(l)) => (u - l).norm_squared(),
            _ => unreachable!("continuous environment"),
        })
        .sum();
    let mc = total / n as f64;
    let exact = expected_gaussian_deviation(&sigma, horizon);
    Ok(OracleCheck {
        name: "deviation_identity",
        lhs: mc,
        rhs: exact,
        passed: (mc - exact).abs() <= 0.03 * exact,
        detail: format!("Monte-Carlo over {n} rollouts vs T tr(Sigma), 3% tolerance"),
    })
}
