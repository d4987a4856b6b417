//! Noise estimation for DART.
//!
//! Each update has two steps:
//!
//! 1. Maximum likelihood: choose the noise parameter under which the
//!    noise-injected supervisor is most likely to have produced the current
//!    robot's controls on held-out demonstrations. Both families have closed
//!    forms:
//!    `Sigma_hat = 1/(M T) sum (pi_hat(x) - pi*(x)) (pi_hat(x) - pi*(x))^T` and
//!    `eps_hat = (1/T) E[#disagreements]`.
//! 2. Shrinkage: rescale the estimate so that the expected deviation it
//!    simulates matches a prior `alpha` on the final robot error. For Gaussian
//!    noise under squared loss the expected deviation over a horizon is
//!    `T tr(Sigma)`, giving `beta = alpha / (T tr(Sigma_hat))`.
//!
//! For epsilon-greedy noise under the 0-1 loss the expected per-step
//! deviation is `eps` itself, so the same objective `|alpha - T eps|` is
//! minimized by `eps_alpha = alpha / T` (clamped to the admissible range).
//! This epsilon rule is our own solution of the scaling objective; only the
//! Gaussian case comes with a published derivation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{ControlSpace, Dataset, NoiseParam, Policy, Rng, SYMMETRY_TOL};
use crate::env::standard_normal;
use crate::error::{Error, Result};
use crate::linalg;

/// Ridge added to covariances before any density evaluation.
pub const DENSITY_RIDGE: f64 = 1e-8;

/// `eps` stays below `1 - 1/K` by this margin so densities remain well defined.
pub const EPS_MARGIN: f64 = 1e-6;

pub fn eps_cap(actions: usize) -> f64 {
    1.0 - 1.0 / actions as f64 - EPS_MARGIN
}

/// Closed-form Gaussian MLE over held-out records.
pub fn mle_gaussian(heldout: &Dataset, robot: &impl Policy) -> Result<DMatrix<f64>> {
    let first = heldout
        .records
        .first()
        .ok_or(Error::Empty("held-out set for the Gaussian MLE"))?;
    let du = first
        .label
        .vector()
        .ok_or_else(|| Error::Config("Gaussian MLE needs continuous controls".into()))?
        .len();
    let mut scatter = DMatrix::zeros(du, du);
    for rec in &heldout.records {
        let predicted = robot.act(&rec.state);
        let (Some(p), Some(l)) = (predicted.vector(), rec.label.vector()) else {
            return Err(Error::Config(
                "Gaussian MLE needs continuous controls".into(),
            ));
        };
        let d = p - l;
        scatter.ger(1.0, &d, &d, 1.0);
    }
    scatter /= heldout.len() as f64;
    // exact symmetry regardless of accumulation order
    Ok((&scatter + scatter.transpose()) * 0.5)
}

/// Closed-form epsilon-greedy MLE: mean disagreement rate, clipped to
/// `[0, 1 - 1/K - 1e-6]`.
pub fn mle_epsilon(heldout: &Dataset, robot: &impl Policy, actions: usize) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out set for the epsilon MLE"));
    }
    let mut disagreements = 0usize;
    for rec in &heldout.records {
        let (Some(p), Some(l)) = (robot.act(&rec.state).index(), rec.label.index()) else {
            return Err(Error::Config("epsilon MLE needs discrete controls".into()));
        };
        disagreements += usize::from(p != l);
    }
    let rate = disagreements as f64 / heldout.len() as f64;
    Ok(rate.clamp(0.0, eps_cap(actions)))
}

/// Result of rescaling a Gaussian estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Shrinkage {
    pub sigma: DMatrix<f64>,
    pub beta: f64,
    /// `tr(Sigma_hat) = 0`, so `alpha` was spread isotropically instead.
    pub isotropic_fallback: bool,
}

/// `Sigma_alpha = alpha / (T tr(Sigma_hat)) * Sigma_hat`.
///
/// A zero-trace estimate (the robot matched the supervisor everywhere) has no
/// direction to scale; the target is then spread isotropically as
/// `alpha / (T d_u) * I`.
pub fn shrink_gaussian(sigma_hat: &DMatrix<f64>, alpha: f64, horizon: usize) -> Result<Shrinkage> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let t = horizon as f64;
    let trace = sigma_hat.trace();
    if trace > 0.0 {
        let beta = alpha / (t * trace);
        Ok(Shrinkage {
            sigma: sigma_hat * beta,
            beta,
            isotropic_fallback: false,
        })
    } else {
        let d = sigma_hat.nrows();
        Ok(Shrinkage {
            sigma: DMatrix::identity(d, d) * (alpha / (t * d as f64)),
            beta: 0.0,
            isotropic_fallback: true,
        })
    }
}

/// `eps_alpha = clamp(alpha / T, 0, 1 - 1/K - 1e-6)`.
///
/// This rule is an extension of the Gaussian one, not a separately
/// established result: epsilon-greedy noise has per-step expected zero-one
/// deviation `eps`, so `T eps = alpha` plays the role of `T tr(Sigma) = alpha`.
/// The estimate itself drops out, hence the unused first argument.
pub fn shrink_epsilon(_eps_hat: f64, alpha: f64, horizon: usize, actions: usize) -> f64 {
    (alpha / horizon as f64).clamp(0.0, eps_cap(actions))
}

/// Expected summed squared deviation `E sum_t |u_t - pi*(x_t)|^2 = T tr(Sigma)`.
pub fn expected_gaussian_deviation(sigma: &DMatrix<f64>, horizon: usize) -> f64 {
    horizon as f64 * sigma.trace()
}

/// `Sigma + ridge I`, after checking symmetry.
pub fn regularize_covariance(sigma: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    linalg::check_symmetric(sigma, SYMMETRY_TOL)?;
    let d = sigma.nrows();
    Ok(sigma + DMatrix::identity(d, d) * ridge)
}

/// Wishart(I, d) draw `G G^T` rescaled to the requested trace. A zero target
/// yields the zero matrix (the same normals are still consumed).
pub fn wishart_random_covariance(
    dim: usize,
    target_trace: f64,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::Config(
            "covariance dimension must be at least 1".into(),
        ));
    }
    if !(target_trace.is_finite() && target_trace >= 0.0) {
        return Err(Error::Config(format!(
            "target trace must be finite and >= 0, got {target_trace}"
        )));
    }
    let g = DMatrix::from_iterator(dim, dim, standard_normal(dim * dim, rng).iter().copied());
    let raw = &g * g.transpose();
    let raw = (&raw + raw.transpose()) * 0.5;
    let normalized = &raw / raw.trace();
    Ok(normalized * target_trace)
}

/// Prior `alpha` on the final robot error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpec {
    /// A fixed value.
    Absolute(f64),
    /// `m T tr(Sigma_hat_1)` (or `m T eps_hat_1`), relative to the first estimate.
    TraceMultiple(f64),
    /// `T tr(Sigma_hat_k)`: no rescaling of the current estimate.
    CurrentEstimate,
}

impl AlphaSpec {
    pub fn resolve(&self, horizon: usize, current_magnitude: f64, first_magnitude: f64) -> f64 {
        let t = horizon as f64;
        match *self {
            AlphaSpec::Absolute(a) => a,
            AlphaSpec::TraceMultiple(m) => m * t * first_magnitude,
            AlphaSpec::CurrentEstimate => t * current_magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaSpec::Absolute(v) | AlphaSpec::TraceMultiple(v)
                if !(v.is_finite() && v >= 0.0) =>
            {
                Err(Error::Config(format!(
                    "alpha parameter must be finite and >= 0, got {v}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One noise update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub psi_hat: NoiseParam,
    pub psi_scaled: NoiseParam,
    pub alpha: f64,
    pub beta: f64,
    pub heldout_size: usize,
    pub isotropic_fallback: bool,
}

/// MLE on `heldout` for the current `robot`, followed by shrinkage to the
/// resolved `alpha`. `first_magnitude` is `tr(Sigma_hat_1)` / `eps_hat_1`
/// when known; `None` means this is the first estimate.
pub fn estimate_noise(
    heldout: &Dataset,
    robot: &impl Policy,
    space: ControlSpace,
    alpha_spec: &AlphaSpec,
    first_magnitude: Option<f64>,
    horizon: usize,
) -> Result<NoiseEstimate> {
    match space {
        ControlSpace::Continuous { .. } => {
            let sigma_hat = mle_gaussian(heldout, robot)?;
            let current = sigma_hat.trace();
            let alpha = alpha_spec.resolve(horizon, current, first_magnitude.unwrap_or(current));
            let shrunk = shrink_gaussian(&sigma_hat, alpha, horizon)?;
            Ok(NoiseEstimate {
                psi_hat: NoiseParam::gaussian(sigma_hat)?,
                psi_scaled: NoiseParam::gaussian(shrunk.sigma)?,
                alpha,
                beta: shrunk.beta,
                heldout_size: heldout.len(),
                isotropic_fallback: shrunk.isotropic_fallback,
            })
        }
        ControlSpace::Discrete { actions } => {
            let eps_hat = mle_epsilon(heldout, robot, actions)?;
            let alpha = alpha_spec.resolve(horizon, eps_hat, first_magnitude.unwrap_or(eps_hat));
            let eps = shrink_epsilon(eps_hat, alpha, horizon, actions);
            Ok(NoiseEstimate {
                psi_hat: NoiseParam::eps_greedy(eps_hat)?,
                psi_scaled: NoiseParam::eps_greedy(eps)?,
                alpha,
                beta: if eps_hat > 0.0 { eps / eps_hat } else { 0.0 },
                heldout_size: heldout.len(),
                isotropic_fallback: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Control, DatasetMeta, PolicyParams, Record, SeedTree, State};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn meta() -> DatasetMeta {
        DatasetMeta {
            env_id: "t".into(),
            horizon: 0,
            seed: 0,
            noise_history: vec![],
        }
    }

    /// Robot that outputs zero; labels are the negated differences, so
    /// `pi_hat(x) - pi*(x) = d`.
    fn gaussian_heldout(diffs: &[Vec<Vec<f64>>]) -> (Dataset, PolicyParams) {
        let mut ds = Dataset::new(meta());
        let du = diffs[0][0].len();
        for (traj, steps) in diffs.iter().enumerate() {
            for (t, d) in steps.iter().enumerate() {
                let label: Vec<f64> = d.iter().map(|v| -v).collect();
                ds.records.push(Record {
                    iteration: 0,
                    trajectory_id: traj,
                    t,
                    state: State::from_slice(&[t as f64]),
                    label: Control::from_slice(&label),
                    executed: Control::from_slice(&label),
                });
            }
        }
        (
            ds,
            PolicyParams::zero(ControlSpace::Continuous { dim: du }, 1),
        )
    }

    fn eps_heldout(disagreements: &[usize], horizon: usize) -> (Dataset, PolicyParams) {
        // robot always plays 0; a label of 1 is a disagreement
        let mut ds = Dataset::new(meta());
        for (traj, &k) in disagreements.iter().enumerate() {
            for t in 0..horizon {
                let label = usize::from(t < k);
                ds.records.push(Record {
                    iteration: 0,
                    trajectory_id: traj,
                    t,
                    state: State::Discrete(t),
                    label: Control::Discrete(label),
                    executed: Control::Discrete(label),
                });
            }
        }
        let robot = PolicyParams::DiscreteTabular {
            actions: vec![],
            default_action: 0,
        };
        (ds, robot)
    }

    #[test]
    fn gaussian_mle_direct_evaluation() {
        let (ds, robot) = gaussian_heldout(&[vec![vec![1.0, 0.0], vec![0.0, 2.0]]]);
        let s = mle_gaussian(&ds, &robot).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn perfect_robot_gives_zero_covariance() {
        let (ds, robot) = gaussian_heldout(&[vec![vec![0.0, 0.0]; 4]]);
        assert_eq!(mle_gaussian(&ds, &robot).unwrap(), DMatrix::zeros(2, 2));
        let empty = Dataset::new(meta());
        assert!(matches!(mle_gaussian(&empty, &robot), Err(Error::Empty(_))));
    }

    #[test]
    fn epsilon_mle_direct_formula() {
        let (ds, robot) = eps_heldout(&[1, 3], 5);
        assert!((mle_epsilon(&ds, &robot, 4).unwrap() - 0.4).abs() < 1e-15);
        let (ds, robot) = eps_heldout(&[0, 0, 0], 5);
        assert_eq!(mle_epsilon(&ds, &robot, 4).unwrap(), 0.0);
        let (ds, robot) = eps_heldout(&[5, 5], 5);
        assert_eq!(mle_epsilon(&ds, &robot, 4).unwrap(), eps_cap(4));
        assert!(mle_epsilon(&Dataset::new(meta()), &robot, 4).is_err());
    }

    /// Epsilon-greedy NLL written out from the categorical density.
    fn eps_nll(disagreements: &[usize], horizon: usize, eps: f64, actions: usize) -> f64 {
        let per: f64 = disagreements
            .iter()
            .map(|&j| {
                -(j as f64 * (eps / (actions as f64 - 1.0)).ln()
                    + (horizon - j) as f64 * (1.0 - eps).ln())
            })
            .sum();
        per / disagreements.len() as f64
    }

    #[test]
    fn epsilon_mle_matches_grid_search() {
        let mut rng = SeedTree::new(2024).rng();
        for _ in 0..20 {
            let horizon = rng.random_range(3..12);
            let m = rng.random_range(1..6);
            let ds: Vec<usize> = (0..m).map(|_| rng.random_range(0..=horizon / 2)).collect();
            if ds.iter().all(|&d| d == 0) {
                continue;
            }
            let (data, robot) = eps_heldout(&ds, horizon);
            let eps_hat = mle_epsilon(&data, &robot, 4).unwrap();
            let (best, _) = (1..7500)
                .map(|i| i as f64 * 1e-4)
                .map(|e| (e, eps_nll(&ds, horizon, e, 4)))
                .fold(
                    (0.0, f64::INFINITY),
                    |acc, p| if p.1 < acc.1 { p } else { acc },
                );
            assert!((eps_hat - best).abs() <= 1e-4, "{eps_hat} vs {best}");
        }
    }

    #[test]
    fn shrink_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let out = shrink_gaussian(&s, 1.0, 2).unwrap();
        assert!((out.beta - 0.2).abs() < 1e-15);
        assert!(
            (out.sigma.clone() - DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.4])).amax()
                < 1e-15
        );
        assert!((expected_gaussian_deviation(&out.sigma, 2) - 1.0).abs() < 1e-12);

        let same = shrink_gaussian(&s, 2.0 * s.trace(), 2).unwrap();
        assert_eq!(same.beta, 1.0);
        assert_eq!(same.sigma, s);

        let zero = shrink_gaussian(&s, 0.0, 2).unwrap();
        assert_eq!(zero.sigma, DMatrix::zeros(2, 2));

        let fallback = shrink_gaussian(&DMatrix::zeros(2, 2), 4.0, 2).unwrap();
        assert!(fallback.isotropic_fallback);
        assert_eq!(fallback.sigma, DMatrix::identity(2, 2));
        assert!(shrink_gaussian(&s, -1.0, 2).is_err());
    }

    #[test]
    fn shrink_epsilon_rules() {
        assert!((shrink_epsilon(0.3, 10.0 * 0.3, 10, 4) - 0.3).abs() < 1e-15);
        assert_eq!(shrink_epsilon(0.3, 0.0, 10, 4), 0.0);
        assert_eq!(shrink_epsilon(0.3, 100.0, 10, 4), 0.75 - 1e-6);
    }

    #[test]
    fn deviation_identity() {
        assert_eq!(
            expected_gaussian_deviation(&DMatrix::identity(2, 2), 10),
            20.0
        );
        assert_eq!(expected_gaussian_deviation(&DMatrix::zeros(3, 3), 10), 0.0);
    }

    #[test]
    fn regularize() {
        let r = regularize_covariance(&DMatrix::zeros(2, 2), 1e-6).unwrap();
        assert_eq!(r, DMatrix::identity(2, 2) * 1e-6);
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let before = pd.clone().symmetric_eigen().eigenvalues;
        let after = regularize_covariance(&pd, 0.25)
            .unwrap()
            .symmetric_eigen()
            .eigenvalues;
        let mut b: Vec<f64> = before.iter().copied().collect();
        let mut a: Vec<f64> = after.iter().copied().collect();
        b.sort_by(f64::total_cmp);
        a.sort_by(f64::total_cmp);
        for (x, y) in b.iter().zip(&a) {
            assert!((y - x - 0.25).abs() < 1e-12);
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(regularize_covariance(&asym, 1e-6).is_err());
    }

    #[test]
    fn wishart_properties() {
        let mut rng = SeedTree::new(77).rng();
        for d in 1..5 {
            for &target in &[0.01, 1.0, 37.5] {
                let s = wishart_random_covariance(d, target, &mut rng).unwrap();
                assert!(((s.trace() - target) / target).abs() < 1e-12);
                assert!(linalg::min_eigenvalue(&s) >= -1e-12);
                assert_eq!(s, s.transpose());
            }
        }
        let one = wishart_random_covariance(1, 0.123, &mut rng).unwrap();
        assert_eq!(one[(0, 0)], 0.123);
    }

    #[test]
    fn estimate_noise_current_estimate_is_identity_scaling() {
        let (ds, robot) =
            gaussian_heldout(&[vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.2, 0.1]]]);
        let est = estimate_noise(
            &ds,
            &robot,
            ControlSpace::Continuous { dim: 2 },
            &AlphaSpec::CurrentEstimate,
            None,
            3,
        )
        .unwrap();
        assert!((est.beta - 1.0).abs() < 1e-12);
        assert_eq!(est.heldout_size, 3);
        let (NoiseParam::Gaussian { sigma: a }, NoiseParam::Gaussian { sigma: b }) =
            (&est.psi_hat, &est.psi_scaled)
        else {
            unreachable!()
        };
        assert!((a - b).amax() < 1e-12);
    }

    fn random_psd(entries: &[f64]) -> DMatrix<f64> {
        let d = (entries.len() as f64).sqrt() as usize;
        let g = DMatrix::from_row_slice(d, d, entries);
        &g * g.transpose() + DMatrix::identity(d, d) * 1e-3
    }

    proptest! {
        #[test]
        fn shrink_hits_alpha_and_keeps_shape(
            entries in prop::collection::vec(-2.0f64..2.0, 9),
            alpha in 0.0f64..50.0,
            horizon in 1usize..100,
        ) {
            let s = random_psd(&entries);
            let out = shrink_gaussian(&s, alpha, horizon).unwrap();
            let dev = expected_gaussian_deviation(&out.sigma, horizon);
            prop_assert!((dev - alpha).abs() <= 1e-9 * alpha.max(1e-300));
            if alpha > 0.0 {
                let lhs = &out.sigma / out.sigma.trace();
                let rhs = &s / s.trace();
                prop_assert!((lhs - rhs).amax() < 1e-12);
            }
        }

        #[test]
        fn mle_outputs_are_valid(
            diffs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..20),
        ) {
            let (ds, robot) = gaussian_heldout(&[diffs]);
            let s = mle_gaussian(&ds, &robot).unwrap();
            prop_assert_eq!(s.clone(), s.transpose());
            prop_assert!(linalg::min_eigenvalue(&s) >= -1e-12);
        }
    }
}
