use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::gridworld::{GridWorldEnv, NUM_ACTIONS};
use super::pointmass::{standard_normal, LinearPointMassEnv};
use super::Environment;
use crate::domain::{Control, ControlSpace, Policy, Rng, State};
use crate::error::{Error, Result};
use crate::linalg;

pub const RICCATI_TOL: f64 = 1e-9;
pub const RICCATI_MAX_ITERS: usize = 10_000;

/// The demonstrator `pi*`.
#[derive(Clone, Debug, PartialEq)]
pub enum Supervisor {
    /// `u = -K x`.
    Lqr { gain: DMatrix<f64> },
    /// One action per cell.
    ScriptedGrid { table: Vec<usize> },
}

impl Supervisor {
    pub fn lqr(env: &LinearPointMassEnv) -> Result<Self> {
        Ok(Supervisor::Lqr {
            gain: lqr_gain(env.a(), env.b(), env.q(), env.r())?,
        })
    }

    /// Shortest-path table: from each cell, the lowest-index action that
    /// reduces the distance to the goal. The goal itself maps to action 0.
    pub fn scripted(grid: &GridWorldEnv) -> Self {
        let dist = grid.goal_distances();
        let table = (0..grid.num_cells())
            .map(|c| {
                if c == grid.goal() {
                    return 0;
                }
                (0..NUM_ACTIONS)
                    .find(|&a| dist[grid.moved(c, a)] < dist[c])
                    .expect("some move approaches the goal from every non-goal cell")
            })
            .collect();
        Supervisor::ScriptedGrid { table }
    }

    pub fn for_env(env: &Environment) -> Result<Self> {
        match env {
            Environment::PointMass(e) => Self::lqr(e),
            Environment::Grid(g) => Ok(Self::scripted(g)),
        }
    }

    pub fn control_space(&self) -> ControlSpace {
        match self {
            Supervisor::Lqr { gain } => ControlSpace::Continuous { dim: gain.nrows() },
            Supervisor::ScriptedGrid { .. } => ControlSpace::Discrete {
                actions: NUM_ACTIONS,
            },
        }
    }
}

impl Policy for Supervisor {
    fn act(&self, x: &State) -> Control {
        supervisor_act(self, x)
    }
}

pub fn supervisor_act(sup: &Supervisor, x: &State) -> Control {
    match (sup, x) {
        (Supervisor::Lqr { gain }, State::Continuous(x)) => Control::Continuous(-(gain * x)),
        (Supervisor::ScriptedGrid { table }, State::Discrete(s)) => Control::Discrete(table[*s]),
        _ => panic!("supervisor and state types disagree (continuous vs discrete)"),
    }
}

/// Fixed point of the discrete algebraic Riccati equation by value iteration,
/// starting from `P = Q`.
pub fn riccati_fixed_point(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let s = r + &bt * &p * b;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Singular("R + B'PB is not positive definite".into()))?;
        let pa = &p * a;
        let next = q + &at * &pa - &at * &p * b * chol.solve(&(&bt * &pa));
        residual = (&next - &p).amax();
        if !residual.is_finite() {
            break;
        }
        p = next;
        if residual < RICCATI_TOL {
            return Ok(p);
        }
    }
    Err(Error::Solver {
        iterations: RICCATI_MAX_ITERS,
        residual,
    })
}

/// LQR feedback gain `K` (control `u = -K x`).
///
/// When `Q` is positive definite the closed loop `A - B K` is also checked for
/// stability; with a singular `Q` unpenalized modes may legitimately stay
/// marginal (e.g. `Q = 0` gives `K = 0`).
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = riccati_fixed_point(a, b, q, r)?;
    let bt = b.transpose();
    let s = r + &bt * &p * b;
    let gain = s
        .cholesky()
        .ok_or_else(|| Error::Singular("R + B'PB is not positive definite".into()))?
        .solve(&(&bt * &p * a));
    if linalg::min_eigenvalue(q) > 0.0 {
        let rho = linalg::spectral_radius(&(a - b * &gain));
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
    }
    Ok(gain)
}

/// Draws noisy controls around a mean, with any factorization precomputed.
///
/// Every draw consumes the same amount of randomness regardless of the noise
/// magnitude: `d_u` normals for Gaussian noise, one uniform and one index for
/// epsilon-greedy.
#[derive(Clone, Debug)]
pub enum NoiseSampler {
    Gaussian { factor: DMatrix<f64> },
    EpsGreedy { eps: f64, actions: usize },
}

impl NoiseSampler {
    pub fn new(psi: &crate::domain::NoiseParam, space: ControlSpace) -> Result<Self> {
        use crate::domain::NoiseParam;
        psi.check_space(space)?;
        match (psi, space) {
            (NoiseParam::Gaussian { sigma }, _) => {
                let clipped =
                    linalg::clip_psd(sigma, crate::domain::SYMMETRY_TOL).ok_or_else(|| {
                        Error::Config("noise covariance is not positive semidefinite".into())
                    })?;
                Ok(NoiseSampler::Gaussian {
                    factor: linalg::psd_factor(&clipped),
                })
            }
            (NoiseParam::EpsGreedy { eps }, ControlSpace::Discrete { actions }) => {
                if actions < 2 {
                    return Err(Error::Config(
                        "epsilon-greedy needs at least 2 actions".into(),
                    ));
                }
                Ok(NoiseSampler::EpsGreedy { eps: *eps, actions })
            }
            _ => unreachable!("checked by check_space"),
        }
    }

    pub fn perturb(&self, mean: &Control, rng: &mut Rng) -> Control {
        match (self, mean) {
            (NoiseSampler::Gaussian { factor }, Control::Continuous(m)) => {
                let z = standard_normal(factor.ncols(), rng);
                Control::Continuous(m + factor * z)
            }
            (NoiseSampler::EpsGreedy { eps, actions }, Control::Discrete(pref)) => {
                let coin: f64 = rng.random();
                let other = rng.random_range(0..actions - 1);
                if coin < *eps {
                    Control::Discrete(if other >= *pref { other + 1 } else { other })
                } else {
                    Control::Discrete(*pref)
                }
            }
            _ => panic!("noise family and control type disagree"),
        }
    }
}

/// `u ~ pi*(. | x, psi)`.
pub fn noisy_supervisor_act(
    sup: &Supervisor,
    x: &State,
    psi: &crate::domain::NoiseParam,
    rng: &mut Rng,
) -> Result<Control> {
    let sampler = NoiseSampler::new(psi, sup.control_space())?;
    Ok(sampler.perturb(&supervisor_act(sup, x), rng))
}

/// `log pi*(u | x, psi)`. Epsilon-greedy with `eps = 0` yields `-inf` off the
/// supervisor's action. Gaussian noise needs a positive-definite covariance.
pub fn action_log_density(
    sup: &Supervisor,
    x: &State,
    u: &Control,
    psi: &crate::domain::NoiseParam,
) -> Result<f64> {
    use crate::domain::NoiseParam;
    let space = sup.control_space();
    psi.check_space(space)?;
    space.check(u)?;
    let mean = supervisor_act(sup, x);
    match (psi, &mean, u) {
        (NoiseParam::Gaussian { sigma }, Control::Continuous(m), Control::Continuous(u)) => {
            gaussian_log_density(&(u - m), sigma)
        }
        (NoiseParam::EpsGreedy { eps }, Control::Discrete(pref), Control::Discrete(a)) => {
            let ControlSpace::Discrete { actions } = space else {
                unreachable!()
            };
            Ok(if a == pref {
                (1.0 - eps).ln()
            } else if *eps == 0.0 {
                f64::NEG_INFINITY
            } else {
                (eps / (actions as f64 - 1.0)).ln()
            })
        }
        _ => unreachable!("checked above"),
    }
}

pub(crate) fn gaussian_log_density(diff: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = sigma.clone().cholesky().ok_or_else(|| {
        Error::Singular(
            "noise covariance is not positive definite; regularize it (regularize_covariance) before evaluating densities"
                .into(),
        )
    })?;
    let d = diff.len() as f64;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mahalanobis = diff.dot(&chol.solve(diff));
    Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + mahalanobis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{NoiseParam, SeedTree};
    use crate::env::{action, StartDistribution};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// Independent root of `P^2 / (1 + P) = 1` by bisection.
    fn bisect_scalar_riccati() -> f64 {
        let f = |p: f64| p * p / (1.0 + p) - 1.0;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_riccati_matches_bisection() {
        let p_oracle = bisect_scalar_riccati();
        assert!((p_oracle - 1.618_033_988_749_895).abs() < 1e-12);
        let p =
            riccati_fixed_point(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((p[(0, 0)] - p_oracle).abs() < 1e-8);
        let k = lqr_gain(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((k[(0, 0)] - p_oracle / (1.0 + p_oracle)).abs() < 1e-8);
    }

    #[test]
    fn zero_input_matrix_is_rejected() {
        let err = lqr_gain(&scalar(1.0), &scalar(0.0), &scalar(1.0), &scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::Solver { .. }), "{err}");
    }

    #[test]
    fn zero_state_cost_gives_zero_gain() {
        let k = lqr_gain(&scalar(1.0), &scalar(1.0), &scalar(0.0), &scalar(1.0)).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn double_integrator_gain_is_stabilizing() {
        let env = LinearPointMassEnv::double_integrator();
        let Supervisor::Lqr { gain } = Supervisor::lqr(&env).unwrap() else {
            unreachable!()
        };
        let rho = linalg::spectral_radius(&(env.a() - env.b() * &gain));
        assert!(rho < 1.0);
        // Riccati residual at the returned solution
        let p = riccati_fixed_point(env.a(), env.b(), env.q(), env.r()).unwrap();
        let bt = env.b().transpose();
        let s = env.r() + &bt * &p * env.b();
        let rhs = env.q() + env.a().transpose() * &p * env.a()
            - env.a().transpose() * &p * env.b() * s.try_inverse().unwrap() * &bt * &p * env.a();
        assert!((rhs - p).amax() < 1e-8);
    }

    #[test]
    fn scalar_closed_loop_decays_monotonically() {
        let k = lqr_gain(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let sup = Supervisor::Lqr { gain: k };
        let mut x = 2.0_f64;
        let u = supervisor_act(&sup, &State::scalar(x));
        assert!((u.vector().unwrap()[0] + 2.0 * 0.618_033_988_7).abs() < 1e-6);
        for _ in 0..20 {
            let u = supervisor_act(&sup, &State::scalar(x)).vector().unwrap()[0];
            let next = x + u;
            assert!(next.abs() < x.abs());
            x = next;
        }
    }

    #[test]
    fn scripted_supervisor() {
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap();
        let sup = Supervisor::scripted(&g);
        assert_eq!(
            supervisor_act(&sup, &State::Discrete(g.cell(1, 2))),
            Control::Discrete(action::RIGHT)
        );
        assert_eq!(
            supervisor_act(&sup, &State::Discrete(g.goal())),
            Control::Discrete(0)
        );
        let dist = g.goal_distances();
        let Supervisor::ScriptedGrid { table } = &sup else {
            unreachable!()
        };
        for c in (0..g.num_cells()).filter(|&c| c != g.goal()) {
            assert!(dist[g.moved(c, table[c])] < dist[c]);
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let sup = Supervisor::Lqr {
            gain: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0]),
        };
        let x = State::from_slice(&[0.3, -1.1]);
        let psi = NoiseParam::Gaussian {
            sigma: DMatrix::zeros(2, 2),
        };
        let mut rng = SeedTree::new(3).rng();
        for _ in 0..10 {
            assert_eq!(
                noisy_supervisor_act(&sup, &x, &psi, &mut rng).unwrap(),
                supervisor_act(&sup, &x)
            );
        }
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap();
        let grid_sup = Supervisor::scripted(&g);
        let psi = NoiseParam::EpsGreedy { eps: 0.0 };
        for c in 0..g.num_cells() {
            let s = State::Discrete(c);
            assert_eq!(
                noisy_supervisor_act(&grid_sup, &s, &psi, &mut rng).unwrap(),
                supervisor_act(&grid_sup, &s)
            );
        }
    }

    #[test]
    fn eps_greedy_frequencies() {
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap();
        let sup = Supervisor::scripted(&g);
        let x = State::Discrete(0);
        let pref = supervisor_act(&sup, &x).index().unwrap();
        let psi = NoiseParam::EpsGreedy { eps: 0.6 };
        let mut rng = SeedTree::new(11).rng();
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[noisy_supervisor_act(&sup, &x, &psi, &mut rng)
                .unwrap()
                .index()
                .unwrap()] += 1;
        }
        for (a, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            let expected = if a == pref { 0.4 } else { 0.2 };
            assert!((freq - expected).abs() < 0.02, "action {a}: {freq}");
        }
    }

    #[test]
    fn gaussian_sample_covariance() {
        let sup = Supervisor::Lqr {
            gain: DMatrix::zeros(2, 2),
        };
        let x = State::from_slice(&[0.0, 0.0]);
        let sigma = DMatrix::identity(2, 2);
        let psi = NoiseParam::Gaussian {
            sigma: sigma.clone(),
        };
        let mut rng = SeedTree::new(5).rng();
        let n = 10_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let u = noisy_supervisor_act(&sup, &x, &psi, &mut rng).unwrap();
            let d = u.vector().unwrap();
            acc += d * d.transpose();
        }
        acc /= n as f64;
        assert!((acc - sigma).norm() < 0.1);
    }

    #[test]
    fn singular_gaussian_is_sampleable() {
        let sup = Supervisor::Lqr {
            gain: DMatrix::zeros(2, 2),
        };
        let psi = NoiseParam::Gaussian {
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        };
        let mut rng = SeedTree::new(6).rng();
        let u =
            noisy_supervisor_act(&sup, &State::from_slice(&[0.0, 0.0]), &psi, &mut rng).unwrap();
        let v = u.vector().unwrap();
        assert!((v[0] - v[1]).abs() < 1e-12);
        // but not density-evaluable
        assert!(matches!(
            action_log_density(&sup, &State::from_slice(&[0.0, 0.0]), &u, &psi),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn log_density_values() {
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap();
        let sup = Supervisor::scripted(&g);
        let x = State::Discrete(0);
        let pref = supervisor_act(&sup, &x).index().unwrap();
        let psi = NoiseParam::EpsGreedy { eps: 0.3 };
        let on = action_log_density(&sup, &x, &Control::Discrete(pref), &psi).unwrap();
        assert!((on - 0.7_f64.ln()).abs() < 1e-12);
        assert!((on + 0.3567).abs() < 1e-4);
        let off = action_log_density(&sup, &x, &Control::Discrete((pref + 1) % 4), &psi).unwrap();
        assert!((off - 0.1_f64.ln()).abs() < 1e-12);
        assert!((off + std::f64::consts::LN_10).abs() < 1e-4);

        let zero = NoiseParam::EpsGreedy { eps: 0.0 };
        assert_eq!(
            action_log_density(&sup, &x, &Control::Discrete((pref + 1) % 4), &zero).unwrap(),
            f64::NEG_INFINITY
        );

        let lqr = Supervisor::Lqr {
            gain: DMatrix::from_element(1, 1, 0.5),
        };
        let x = State::scalar(2.0);
        let mode = supervisor_act(&lqr, &x);
        let psi = NoiseParam::Gaussian { sigma: scalar(1.0) };
        let ld = action_log_density(&lqr, &x, &mode, &psi).unwrap();
        assert!((ld + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((ld + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn discrete_density_sums_to_one() {
        let g = GridWorldEnv::new(3, 3, (2, 2), 0.0, StartDistribution::UniformNonGoal).unwrap();
        let sup = Supervisor::scripted(&g);
        for eps in [0.0, 0.1, 0.5, 0.74] {
            let psi = NoiseParam::EpsGreedy { eps };
            for c in 0..g.num_cells() {
                let x = State::Discrete(c);
                let total: f64 = (0..NUM_ACTIONS)
                    .map(|a| {
                        action_log_density(&sup, &x, &Control::Discrete(a), &psi)
                            .unwrap()
                            .exp()
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_density_normalizes() {
        // Monte-Carlo integral over a box of +-8 standard deviations.
        let sup = Supervisor::Lqr {
            gain: DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.3]),
        };
        let x = State::from_slice(&[1.0, -2.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 1.0]);
        let psi = NoiseParam::Gaussian {
            sigma: sigma.clone(),
        };
        let mean = supervisor_act(&sup, &x).vector().unwrap().clone();
        let half = [8.0 * 0.5_f64.sqrt(), 8.0];
        let volume = 4.0 * half[0] * half[1];
        let mut rng = SeedTree::new(21).rng();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = DVector::from_iterator(
                2,
                (0..2).map(|i| mean[i] + rng.random_range(-half[i]..half[i])),
            );
            acc += action_log_density(&sup, &x, &Control::Continuous(u), &psi)
                .unwrap()
                .exp();
        }
        let integral = acc / n as f64 * volume;
        assert!((integral - 1.0).abs() < 0.01, "{integral}");
    }
}
