//! Empirical risk minimization: the "train the robot" step shared by every
//! algorithm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Control, Dataset, FeatureMap, PolicyParams, State};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Least squares on `phi(x)` with an L2 penalty on the weights (the bias
    /// is not penalized).
    ContinuousRidge {
        lambda: f64,
        #[serde(default)]
        features: FeatureMap,
        #[serde(default = "default_true")]
        fit_bias: bool,
    },
    /// Most frequent label per state; ties go to the lowest action index.
    DiscreteTabularMajority {
        #[serde(default)]
        default_action: usize,
    },
}

fn default_true() -> bool {
    true
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        if let LearnerSpec::ContinuousRidge { lambda, .. } = self {
            if !(lambda.is_finite() && *lambda >= 0.0) {
                return Err(Error::Config(format!(
                    "ridge lambda must be finite and >= 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

/// Fits policy parameters to the dataset's `(state, label)` pairs.
pub fn fit(spec: &LearnerSpec, dataset: &Dataset) -> Result<PolicyParams> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("cannot fit a policy to an empty dataset"));
    }
    match spec {
        LearnerSpec::ContinuousRidge {
            lambda,
            features,
            fit_bias,
        } => fit_ridge(*lambda, features, *fit_bias, dataset),
        LearnerSpec::DiscreteTabularMajority { default_action } => {
            fit_majority(*default_action, dataset)
        }
    }
}

pub fn predict(theta: &PolicyParams, x: &State) -> Control {
    theta.predict(x)
}

fn fit_ridge(
    lambda: f64,
    features: &FeatureMap,
    fit_bias: bool,
    dataset: &Dataset,
) -> Result<PolicyParams> {
    let type_error = || Error::Config("ridge regression needs continuous states and labels".into());
    let first = &dataset.records[0];
    let dx = first.state.vector().ok_or_else(type_error)?.len();
    let du = first.label.vector().ok_or_else(type_error)?.len();
    features.check(dx)?;
    let df = features.output_dim(dx);
    let p = df + usize::from(fit_bias);
    let n = dataset.len();

    let mut design = DMatrix::zeros(n, p);
    let mut targets = DMatrix::zeros(n, du);
    for (i, rec) in dataset.records.iter().enumerate() {
        let x = rec.state.vector().ok_or_else(type_error)?;
        let u = rec.label.vector().ok_or_else(type_error)?;
        if x.len() != dx || u.len() != du {
            return Err(Error::Dimension {
                context: "dataset record",
                expected: dx,
                got: x.len(),
            });
        }
        design
            .view_mut((i, 0), (1, df))
            .copy_from(&features.apply(x).transpose());
        if fit_bias {
            design[(i, df)] = 1.0;
        }
        targets.set_row(i, &u.transpose());
    }

    let mut gram = design.transpose() * &design;
    for j in 0..df {
        gram[(j, j)] += lambda;
    }
    let rhs = design.transpose() * &targets;
    let singular = || {
        if lambda == 0.0 {
            Error::Singular("normal equations are singular with lambda = 0; use lambda > 0".into())
        } else {
            Error::Singular("normal equations are singular".into())
        }
    };
    let scale = gram.diagonal().max();
    let chol = gram.cholesky().ok_or_else(singular)?;
    let pivot_min = chol.l().diagonal().map(|v| v * v).min();
    if pivot_min.is_nan() || pivot_min <= scale * 1e-13 {
        return Err(singular());
    }
    let coef = chol.solve(&rhs);

    let weights = coef.rows(0, df).transpose();
    let bias = if fit_bias {
        coef.row(df).transpose()
    } else {
        DVector::zeros(du)
    };
    Ok(PolicyParams::ContinuousLinear {
        weights,
        bias,
        features: features.clone(),
    })
}

fn fit_majority(default_action: usize, dataset: &Dataset) -> Result<PolicyParams> {
    let type_error = || Error::Config("tabular majority needs discrete states and labels".into());
    let mut counts: Vec<Vec<usize>> = Vec::new();
    for rec in &dataset.records {
        let s = rec.state.index().ok_or_else(type_error)?;
        let a = rec.label.index().ok_or_else(type_error)?;
        if counts.len() <= s {
            counts.resize(s + 1, Vec::new());
        }
        let c = &mut counts[s];
        if c.len() <= a {
            c.resize(a + 1, 0);
        }
        c[a] += 1;
    }
    let actions = counts
        .iter()
        .map(|c| {
            let best = *c.iter().max()?;
            if best == 0 {
                return None;
            }
            c.iter().position(|&n| n == best)
        })
        .collect();
    Ok(PolicyParams::DiscreteTabular {
        actions,
        default_action,
    })
}
