use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Wire shape shared by states and controls: a bare integer for discrete
/// values, an array for continuous ones.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PointRepr {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// An observable state, either a real vector or a cell index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PointRepr", from = "PointRepr")]
pub enum State {
    Continuous(DVector<f64>),
    Discrete(usize),
}

/// A control input, either a real vector or an action index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PointRepr", from = "PointRepr")]
pub enum Control {
    Continuous(DVector<f64>),
    Discrete(usize),
}

macro_rules! point_impls {
    ($ty:ident) => {
        impl $ty {
            pub fn vector(&self) -> Option<&DVector<f64>> {
                match self {
                    $ty::Continuous(v) => Some(v),
                    $ty::Discrete(_) => None,
                }
            }

            pub fn index(&self) -> Option<usize> {
                match self {
                    $ty::Continuous(_) => None,
                    $ty::Discrete(i) => Some(*i),
                }
            }

            pub fn scalar(v: f64) -> Self {
                $ty::Continuous(DVector::from_element(1, v))
            }

            pub fn from_slice(v: &[f64]) -> Self {
                $ty::Continuous(DVector::from_column_slice(v))
            }

            /// Values written to flat files: the vector entries, or the index as a number.
            pub fn components(&self) -> Vec<f64> {
                match self {
                    $ty::Continuous(v) => v.iter().copied().collect(),
                    $ty::Discrete(i) => vec![*i as f64],
                }
            }
        }

        impl From<$ty> for PointRepr {
            fn from(p: $ty) -> Self {
                match p {
                    $ty::Continuous(v) => PointRepr::Continuous(v.iter().copied().collect()),
                    $ty::Discrete(i) => PointRepr::Discrete(i),
                }
            }
        }

        impl From<PointRepr> for $ty {
            fn from(p: PointRepr) -> Self {
                match p {
                    PointRepr::Continuous(v) => $ty::Continuous(DVector::from_vec(v)),
                    PointRepr::Discrete(i) => $ty::Discrete(i),
                }
            }
        }
    };
}

point_impls!(State);
point_impls!(Control);

/// Control space of an environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlSpace {
    Continuous { dim: usize },
    Discrete { actions: usize },
}

impl ControlSpace {
    pub fn check(&self, u: &Control) -> Result<()> {
        match (self, u) {
            (ControlSpace::Continuous { dim }, Control::Continuous(v)) => {
                if v.len() != *dim {
                    return Err(Error::Dimension {
                        context: "control",
                        expected: *dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::OutOfRange("control has non-finite entries".into()));
                }
                Ok(())
            }
            (ControlSpace::Discrete { actions }, Control::Discrete(a)) => {
                if a >= actions {
                    return Err(Error::OutOfRange(format!(
                        "action {a} outside 0..{actions}"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::Config(
                "control type does not match the environment's control space".into(),
            )),
        }
    }

    pub fn zero(&self) -> Control {
        match self {
            ControlSpace::Continuous { dim } => Control::Continuous(DVector::zeros(*dim)),
            ControlSpace::Discrete { .. } => Control::Discrete(0),
        }
    }
}

/// `x_0, u_0, x_1, ..., u_{T-1}, x_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn new(states: Vec<State>, controls: Vec<Control>) -> Result<Self> {
        if controls.is_empty() || states.len() != controls.len() + 1 {
            return Err(Error::Config(format!(
                "trajectory needs T >= 1 controls and T + 1 states, got {} and {}",
                controls.len(),
                states.len()
            )));
        }
        Ok(Trajectory { states, controls })
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn terminal(&self) -> &State {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }
}

/// Sufficient statistics of the injected noise.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseParam {
    /// Zero-mean Gaussian added to the supervisor's control.
    Gaussian { sigma: DMatrix<f64> },
    /// With probability `eps` the supervisor's action is swapped for one of
    /// the other `K - 1` actions, uniformly.
    EpsGreedy { eps: f64 },
}

pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

impl NoiseParam {
    /// Validates symmetry and PSD-ness; slightly negative eigenvalues are clipped to zero.
    pub fn gaussian(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Config(format!(
                "noise covariance must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "noise covariance has non-finite entries".into(),
            ));
        }
        linalg::check_symmetric(&sigma, SYMMETRY_TOL)?;
        let sigma = linalg::clip_psd(&sigma, SYMMETRY_TOL)
            .ok_or_else(|| Error::Config("noise covariance is not positive semidefinite".into()))?;
        Ok(NoiseParam::Gaussian { sigma })
    }

    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        Self::gaussian(DMatrix::identity(dim, dim) * scale)
    }

    pub fn eps_greedy(eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1), got {eps}"
            )));
        }
        Ok(NoiseParam::EpsGreedy { eps })
    }

    /// The noiseless member of the family matching `space`.
    pub fn zero_for(space: ControlSpace) -> Self {
        match space {
            ControlSpace::Continuous { dim } => NoiseParam::Gaussian {
                sigma: DMatrix::zeros(dim, dim),
            },
            ControlSpace::Discrete { .. } => NoiseParam::EpsGreedy { eps: 0.0 },
        }
    }

    pub fn check_space(&self, space: ControlSpace) -> Result<()> {
        match (self, space) {
            (NoiseParam::Gaussian { sigma }, ControlSpace::Continuous { dim }) => {
                if sigma.nrows() != dim {
                    return Err(Error::Dimension {
                        context: "noise covariance",
                        expected: dim,
                        got: sigma.nrows(),
                    });
                }
                Ok(())
            }
            (NoiseParam::EpsGreedy { .. }, ControlSpace::Discrete { .. }) => Ok(()),
            _ => Err(Error::Config(
                "noise family does not match the environment's control space".into(),
            )),
        }
    }

    /// `tr(Sigma)` for Gaussian noise, `eps` for epsilon-greedy.
    pub fn magnitude(&self) -> f64 {
        match self {
            NoiseParam::Gaussian { sigma } => sigma.trace(),
            NoiseParam::EpsGreedy { eps } => *eps,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseParam::Gaussian { sigma } => sigma.iter().all(|&x| x == 0.0),
            NoiseParam::EpsGreedy { eps } => *eps == 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum NoiseRepr {
    Gaussian { sigma: Vec<Vec<f64>> },
    EpsGreedy { eps: f64 },
}

impl Serialize for NoiseParam {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            NoiseParam::Gaussian { sigma } => NoiseRepr::Gaussian {
                sigma: linalg::to_rows(sigma),
            },
            NoiseParam::EpsGreedy { eps } => NoiseRepr::EpsGreedy { eps: *eps },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NoiseParam {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match NoiseRepr::deserialize(d)? {
            NoiseRepr::Gaussian { sigma } => {
                let m = linalg::from_rows(&sigma).map_err(D::Error::custom)?;
                NoiseParam::gaussian(m).map_err(D::Error::custom)
            }
            NoiseRepr::EpsGreedy { eps } => NoiseParam::eps_greedy(eps).map_err(D::Error::custom),
        }
    }
}

/// Which coordinates of a continuous state the learner gets to see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "indices", rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Identity,
    Select(Vec<usize>),
}

impl FeatureMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            FeatureMap::Identity => x.clone(),
            FeatureMap::Select(idx) => DVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i])),
        }
    }

    pub fn output_dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => state_dim,
            FeatureMap::Select(idx) => idx.len(),
        }
    }

    pub fn check(&self, state_dim: usize) -> Result<()> {
        if let FeatureMap::Select(idx) = self {
            if idx.is_empty() {
                return Err(Error::Config("feature selection is empty".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= state_dim) {
                return Err(Error::OutOfRange(format!(
                    "feature index {bad} outside state dimension {state_dim}"
                )));
            }
        }
        Ok(())
    }
}

/// Learned robot policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyParams {
    /// `u = W phi(x) + b`.
    ContinuousLinear {
        weights: DMatrix<f64>,
        bias: DVector<f64>,
        features: FeatureMap,
    },
    /// One action per state; states never seen fall back to `default_action`.
    DiscreteTabular {
        actions: Vec<Option<usize>>,
        default_action: usize,
    },
}

impl PolicyParams {
    /// The policy that outputs zero (continuous) or the default action everywhere.
    pub fn zero(space: ControlSpace, state_dim: usize) -> Self {
        match space {
            ControlSpace::Continuous { dim } => PolicyParams::ContinuousLinear {
                weights: DMatrix::zeros(dim, state_dim),
                bias: DVector::zeros(dim),
                features: FeatureMap::Identity,
            },
            ControlSpace::Discrete { .. } => PolicyParams::DiscreteTabular {
                actions: Vec::new(),
                default_action: 0,
            },
        }
    }

    pub fn predict(&self, x: &State) -> Control {
        match (self, x) {
            (
                PolicyParams::ContinuousLinear {
                    weights,
                    bias,
                    features,
                },
                State::Continuous(v),
            ) => Control::Continuous(weights * features.apply(v) + bias),
            (
                PolicyParams::DiscreteTabular {
                    actions,
                    default_action,
                },
                State::Discrete(s),
            ) => Control::Discrete(
                actions
                    .get(*s)
                    .copied()
                    .flatten()
                    .unwrap_or(*default_action),
            ),
            _ => panic!("policy and state types disagree (continuous vs discrete)"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PolicyRepr {
    ContinuousLinear {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        features: FeatureMap,
    },
    DiscreteTabular {
        actions: Vec<Option<usize>>,
        default_action: usize,
    },
}

impl Serialize for PolicyParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            PolicyParams::ContinuousLinear {
                weights,
                bias,
                features,
            } => PolicyRepr::ContinuousLinear {
                weights: linalg::to_rows(weights),
                bias: bias.iter().copied().collect(),
                features: features.clone(),
            },
            PolicyParams::DiscreteTabular {
                actions,
                default_action,
            } => PolicyRepr::DiscreteTabular {
                actions: actions.clone(),
                default_action: *default_action,
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolicyParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        Ok(match PolicyRepr::deserialize(d)? {
            PolicyRepr::ContinuousLinear {
                weights,
                bias,
                features,
            } => {
                let weights = linalg::from_rows(&weights).map_err(D::Error::custom)?;
                if weights.nrows() != bias.len() {
                    return Err(D::Error::custom("bias length must equal weight rows"));
                }
                PolicyParams::ContinuousLinear {
                    weights,
                    bias: DVector::from_vec(bias),
                    features,
                }
            }
            PolicyRepr::DiscreteTabular {
                actions,
                default_action,
            } => PolicyParams::DiscreteTabular {
                actions,
                default_action,
            },
        })
    }
}

/// Anything that maps a state to a control deterministically.
pub trait Policy: Sync {
    fn act(&self, x: &State) -> Control;
}

impl Policy for PolicyParams {
    fn act(&self, x: &State) -> Control {
        self.predict(x)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, x: &State) -> Control {
        (**self).act(x)
    }
}
