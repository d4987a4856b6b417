use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{Rng, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;

/// `x' = A x + B u + w`, `w ~ N(0, sigma_w^2 I)`, `x_0 ~ N(mean, std^2 I)`.
///
/// Reward is the negative quadratic cost `-sum_t (x_t' Q x_t + u_t' R u_t)`
/// over `t = 0..T-1`; it is reported, never learned from.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPointMassEnv {
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
    pub(crate) process_noise_std: f64,
    pub(crate) x0_mean: DVector<f64>,
    pub(crate) x0_std: f64,
    pub(crate) q: DMatrix<f64>,
    pub(crate) r: DMatrix<f64>,
}

const PSD_TOL: f64 = 1e-10;

impl LinearPointMassEnv {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        process_noise_std: f64,
        x0_mean: DVector<f64>,
        x0_std: f64,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let dx = a.nrows();
        if !a.is_square() || dx == 0 {
            return Err(Error::Config("A must be a non-empty square matrix".into()));
        }
        let check = |ok: bool, context: &'static str, expected: usize, got: usize| {
            if ok {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    got,
                })
            }
        };
        check(b.nrows() == dx, "B rows", dx, b.nrows())?;
        let du = b.ncols();
        if du == 0 {
            return Err(Error::Config("B must have at least one column".into()));
        }
        check(q.shape() == (dx, dx), "Q size", dx, q.nrows())?;
        check(r.shape() == (du, du), "R size", du, r.nrows())?;
        check(x0_mean.len() == dx, "x0 mean", dx, x0_mean.len())?;
        if !(process_noise_std >= 0.0 && process_noise_std.is_finite()) {
            return Err(Error::Config(
                "process noise std must be finite and >= 0".into(),
            ));
        }
        if !(x0_std >= 0.0 && x0_std.is_finite()) {
            return Err(Error::Config(
                "initial-state std must be finite and >= 0".into(),
            ));
        }
        linalg::check_symmetric(&q, PSD_TOL)?;
        linalg::check_symmetric(&r, PSD_TOL)?;
        if linalg::min_eigenvalue(&q) < -PSD_TOL {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        if linalg::min_eigenvalue(&r) <= 0.0 {
            return Err(Error::Config("R must be positive definite".into()));
        }
        Ok(LinearPointMassEnv {
            a,
            b,
            process_noise_std,
            x0_mean,
            x0_std,
            q,
            r,
        })
    }

    /// Planar double integrator: state `(p_x, v_x, p_y, v_y)`, control `(a_x, a_y)`,
    /// time step 0.1, process noise 0.01, costs `Q = I`, `R = I`.
    pub fn double_integrator() -> Self {
        let dt = 0.1;
        let axis_a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let axis_b = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
        let mut a = DMatrix::zeros(4, 4);
        let mut b = DMatrix::zeros(4, 2);
        for axis in 0..2 {
            a.view_mut((2 * axis, 2 * axis), (2, 2)).copy_from(&axis_a);
            b.view_mut((2 * axis, axis), (2, 1)).copy_from(&axis_b);
        }
        LinearPointMassEnv::new(
            a,
            b,
            0.01,
            DVector::from_column_slice(&[1.0, 0.0, -1.0, 0.0]),
            0.5,
            DMatrix::identity(4, 4),
            DMatrix::identity(2, 2),
        )
        .expect("double integrator preset is valid")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn process_noise_std(&self) -> f64 {
        self.process_noise_std
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn x0_std(&self) -> f64 {
        self.x0_std
    }

    /// Always draws `d_x` normals, even when the std is zero.
    pub fn sample_initial(&self, rng: &mut Rng) -> DVector<f64> {
        let z = standard_normal(self.state_dim(), rng);
        &self.x0_mean + z * self.x0_std
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
        let w = standard_normal(self.state_dim(), rng);
        &self.a * x + &self.b * u + w * self.process_noise_std
    }

    pub fn reward(&self, traj: &Trajectory) -> f64 {
        let cost: f64 = traj
            .states
            .iter()
            .zip(&traj.controls)
            .map(|(x, u)| {
                let x = x.vector().expect("continuous state");
                let u = u.vector().expect("continuous control");
                x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
            })
            .sum();
        -cost
    }
}

pub(crate) fn standard_normal(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Control, SeedTree, State};

    #[test]
    fn identity_dynamics_step() {
        let env = LinearPointMassEnv::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            0.0,
            DVector::zeros(2),
            0.0,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mut rng = SeedTree::new(1).rng();
        let next = env.step(
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 1.0]),
            &mut rng,
        );
        assert_eq!(next, DVector::from_column_slice(&[1.0, 1.0]));
    }

    #[test]
    fn quadratic_reward() {
        let one = DMatrix::identity(1, 1);
        let env = LinearPointMassEnv::new(
            one.clone(),
            one.clone(),
            0.0,
            DVector::zeros(1),
            0.0,
            one.clone(),
            one,
        )
        .unwrap();
        let traj = Trajectory::new(
            vec![State::scalar(1.0), State::scalar(0.0)],
            vec![Control::scalar(1.0)],
        )
        .unwrap();
        assert_eq!(env.reward(&traj), -2.0);
        let zero = Trajectory::new(
            vec![State::scalar(0.0), State::scalar(0.0)],
            vec![Control::scalar(0.0)],
        )
        .unwrap();
        assert_eq!(env.reward(&zero), 0.0);
    }

    #[test]
    fn validation() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let bad_r = LinearPointMassEnv::new(
            i2.clone(),
            i2.clone(),
            0.0,
            DVector::zeros(2),
            0.0,
            i2.clone(),
            DMatrix::zeros(2, 2),
        );
        assert!(bad_r.is_err());
        let bad_q = LinearPointMassEnv::new(
            i2.clone(),
            i2.clone(),
            0.0,
            DVector::zeros(2),
            0.0,
            -i2.clone(),
            i2.clone(),
        );
        assert!(bad_q.is_err());
        let bad_b = LinearPointMassEnv::new(
            i2.clone(),
            DMatrix::identity(3, 2),
            0.0,
            DVector::zeros(2),
            0.0,
            i2.clone(),
            i2,
        );
        assert!(matches!(bad_b, Err(Error::Dimension { .. })));
    }

    #[test]
    fn double_integrator_shapes() {
        let env = LinearPointMassEnv::double_integrator();
        assert_eq!(env.state_dim(), 4);
        assert_eq!(env.control_dim(), 2);
        assert_eq!(env.a()[(0, 1)], 0.1);
        assert!((env.b()[(0, 0)] - 0.005).abs() < 1e-15);
        assert_eq!(env.b()[(3, 1)], 0.1);
    }
}
