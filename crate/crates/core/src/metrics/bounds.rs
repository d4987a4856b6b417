use serde::Serialize;

use super::exact::{enumerate_policy, exact_kl, Divergence, EnumeratedDistribution};
use super::{trajectory_loss, LossSpec};
use crate::domain::Policy;
use crate::env::{GridWorldEnv, Supervisor};
use crate::error::{Error, Result};

const BOUND_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        BoundCheck {
            lhs,
            rhs,
            holds: lhs <= rhs + BOUND_SLACK,
        }
    }
}

/// `|E_Q J - E_P J| <= T sqrt(KL(P || Q) / 2)` with `J = J(robot, sup | xi)`,
/// `P` the robot's distribution and `Q` the collection distribution.
pub fn check_trajectory_loss_bound(
    p: &EnumeratedDistribution,
    q: &EnumeratedDistribution,
    robot: &dyn Policy,
    sup: &dyn Policy,
    loss: &LossSpec,
) -> Result<BoundCheck> {
    if !loss.is_bounded() {
        return Err(Error::Config(
            "the trajectory-loss bound needs a per-step loss in [0, 1]".into(),
        ));
    }
    if p.horizon != q.horizon {
        return Err(Error::Dimension {
            context: "enumeration horizon",
            expected: p.horizon,
            got: q.horizon,
        });
    }
    let j =
        |key: &[usize]| trajectory_loss(robot, sup, &EnumeratedDistribution::trajectory(key), loss);
    let lhs = (q.expectation(j) - p.expectation(j)).abs();
    let rhs = match exact_kl(p, q) {
        Divergence::Finite(kl) => p.horizon as f64 * (kl / 2.0).sqrt(),
        Divergence::Infinite => f64::INFINITY,
    };
    Ok(BoundCheck::new(lhs, rhs))
}

/// `|E_P f - E_Q f| <= B TV(P, Q)` for distributions on a finite support.
pub fn check_expectation_bound(p: &[f64], q: &[f64], f: &[f64], bound: f64) -> Result<BoundCheck> {
    if p.len() != q.len() || p.len() != f.len() {
        return Err(Error::Dimension {
            context: "support size",
            expected: p.len(),
            got: if q.len() != p.len() { q.len() } else { f.len() },
        });
    }
    for dist in [p, q] {
        if dist.iter().any(|&v| v.is_nan() || v < 0.0)
            || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::OutOfRange(
                "probabilities must be non-negative and sum to 1".into(),
            ));
        }
    }
    if let Some(v) = f.iter().find(|&&v| !(0.0..=bound).contains(&v)) {
        return Err(Error::OutOfRange(format!(
            "f value {v} outside [0, {bound}]"
        )));
    }
    let expect = |d: &[f64]| d.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
    let lhs = (expect(p) - expect(q)).abs();
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(BoundCheck::new(lhs, bound * tv))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceOutcome {
    /// Finite divergence to the noisy supervisor, infinite to the noiseless one.
    Confirmed,
    /// Both divergences infinite (or both finite): no strict inequality.
    NotStrict,
    /// The robot never errs on its own distribution.
    PremiseViolated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseDivergenceReport {
    #[serde(serialize_with = "ser_divergence")]
    pub kl_noisy: Divergence,
    #[serde(serialize_with = "ser_divergence")]
    pub kl_clean: Divergence,
    /// `E_{p(xi | robot)} J(robot, sup | xi)` under the zero-one loss.
    pub robot_error: f64,
    pub outcome: DivergenceOutcome,
}

fn ser_divergence<S: serde::Serializer>(
    d: &Divergence,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&d.to_string())
}

/// Compares `KL(p(xi|robot) || p(xi|sup, eps))` against
/// `KL(p(xi|robot) || p(xi|sup))` by exact enumeration.
pub fn check_noise_divergence(
    grid: &GridWorldEnv,
    sup: &Supervisor,
    robot: &dyn Policy,
    eps: f64,
    horizon: usize,
) -> Result<NoiseDivergenceReport> {
    let p = enumerate_policy(grid, robot, 0.0, horizon)?;
    let noisy = enumerate_policy(grid, sup, eps, horizon)?;
    let clean = enumerate_policy(grid, sup, 0.0, horizon)?;
    let robot_error = p.expectation(|key| {
        trajectory_loss(
            robot,
            sup,
            &EnumeratedDistribution::trajectory(key),
            &LossSpec::ZeroOne,
        )
    });
    let kl_noisy = exact_kl(&p, &noisy);
    let kl_clean = exact_kl(&p, &clean);
    let outcome = if robot_error <= 0.0 {
        DivergenceOutcome::PremiseViolated
    } else if kl_noisy.is_finite() && !kl_clean.is_finite() {
        DivergenceOutcome::Confirmed
    } else {
        DivergenceOutcome::NotStrict
    };
    Ok(NoiseDivergenceReport {
        kl_noisy,
        kl_clean,
        robot_error,
        outcome,
    })
}
