//! Experiment configuration files (TOML).
//!
//! Parsing happens in two passes: serde reads a loosely typed document, then
//! [`ExperimentConfig::from_toml`] validates it and reports problems by field
//! path, e.g. `algorithms[1].kind`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::algorithms::{AlgorithmConfig, AlgorithmKind};
use crate::domain::{ControlSpace, FeatureMap, NoiseParam};
use crate::env::{Environment, GridWorldEnv, LinearPointMassEnv, StartDistribution, Supervisor};
use crate::error::{Error, Result};
use crate::learner::LearnerSpec;
use crate::metrics::LossSpec;
use crate::noise::AlphaSpec;

const POINTMASS_COMPARE: &str = include_str!("../../../../configs/pointmass-compare.toml");
const GRIDWORLD_COMPARE: &str = include_str!("../../../../configs/gridworld-compare.toml");

/// Built-in configurations, addressable as `preset:NAME`.
pub const PRESETS: [(&str, &str); 2] = [
    ("pointmass-compare", POINTMASS_COMPARE),
    ("gridworld-compare", GRIDWORLD_COMPARE),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupervisorKind {
    Lqr,
    Scripted,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub environment: Environment,
    pub supervisor: SupervisorKind,
    pub learner: LearnerSpec,
    pub loss: LossSpec,
    pub horizon: usize,
    pub algorithms: Vec<AlgorithmConfig>,
    pub seeds: Vec<u64>,
    pub eval_rollouts: usize,
    pub output_dir: Option<PathBuf>,
    pub subsample: Option<usize>,
    /// Write per-run dataset and policy files.
    pub save_artifacts: bool,
}

impl ExperimentConfig {
    /// Reads a file path, or `preset:NAME` for a built-in configuration.
    pub fn load(source: &str) -> Result<Self> {
        match source.strip_prefix("preset:") {
            Some(name) => Self::preset(name),
            None => {
                let path = Path::new(source);
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                names.join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        raw.validate()
    }

    pub fn build_supervisor(&self) -> Result<Supervisor> {
        match (self.supervisor, &self.environment) {
            (SupervisorKind::Lqr, Environment::PointMass(e)) => Supervisor::lqr(e),
            (SupervisorKind::Scripted, Environment::Grid(g)) => Ok(Supervisor::scripted(g)),
            _ => Err(field("supervisor.kind", "does not match the environment")),
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn prefixed(path: &str, e: Error) -> Error {
    match e {
        Error::Config(m) | Error::OutOfRange(m) => field(path, m),
        other => field(path, other),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    horizon: usize,
    seeds: Option<Vec<u64>>,
    seed_count: Option<u64>,
    eval_rollouts: usize,
    output_dir: Option<PathBuf>,
    subsample: Option<usize>,
    #[serde(default = "yes")]
    save_artifacts: bool,
    environment: RawEnvironment,
    supervisor: RawSupervisor,
    learner: RawLearner,
    loss: Option<RawLoss>,
    algorithms: Vec<RawAlgorithm>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    kind: String,
    preset: Option<String>,
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<Vec<f64>>>,
    process_noise_std: Option<f64>,
    x0_mean: Option<Vec<f64>>,
    x0_std: Option<f64>,
    q: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    width: Option<usize>,
    height: Option<usize>,
    goal: Option<[usize; 2]>,
    slip: Option<f64>,
    start: Option<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupervisor {
    kind: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearner {
    kind: String,
    lambda: Option<f64>,
    features: Option<Vec<usize>>,
    fit_bias: Option<bool>,
    default_action: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    kind: String,
    normalizer: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlpha {
    kind: String,
    value: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    family: String,
    sigma: Option<Vec<Vec<f64>>>,
    scale: Option<f64>,
    eps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    kind: String,
    name: Option<String>,
    demos_per_iteration: usize,
    iterations: usize,
    demo_schedule: Option<Vec<usize>>,
    alpha: Option<RawAlpha>,
    dagger_beta: Option<f64>,
    initial_noise: Option<RawNoise>,
    isotropic_scale: Option<f64>,
    fixed_noise: Option<RawNoise>,
    retrain_iterations: Option<Vec<usize>>,
    #[serde(default)]
    force_zero_noise: bool,
    dagger_bootstrap: Option<bool>,
    checkpoints: Option<Vec<usize>>,
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    crate::linalg::from_rows(rows).map_err(|e| prefixed(path, e))
}

impl RawConfig {
    fn validate(self) -> Result<ExperimentConfig> {
        if self.experiment.trim().is_empty() {
            return Err(field("experiment", "must not be empty"));
        }
        if self.horizon == 0 {
            return Err(field("horizon", "must be at least 1"));
        }
        if self.eval_rollouts == 0 {
            return Err(field("eval_rollouts", "must be at least 1"));
        }
        if self.subsample == Some(0) {
            return Err(field("subsample", "must be at least 1"));
        }
        let seeds = match (self.seeds, self.seed_count) {
            (Some(_), Some(_)) => {
                return Err(field(
                    "seeds",
                    "give either `seeds` or `seed_count`, not both",
                ))
            }
            (Some(s), None) => s,
            (None, Some(n)) => (0..n).collect(),
            (None, None) => return Err(field("seeds", "missing (or give `seed_count`)")),
        };
        if seeds.is_empty() {
            return Err(field("seeds", "need at least one seed"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(field("seeds", "contains duplicates"));
        }

        let environment = self.environment.validate()?;
        let space = environment.control_space();
        let supervisor = match self.supervisor.kind.as_str() {
            "lqr" if environment.is_continuous() => SupervisorKind::Lqr,
            "scripted" if !environment.is_continuous() => SupervisorKind::Scripted,
            "lqr" | "scripted" => {
                return Err(field(
                    "supervisor.kind",
                    format!("`{}` does not fit the environment", self.supervisor.kind),
                ))
            }
            other => {
                return Err(field(
                    "supervisor.kind",
                    format!("unknown supervisor `{other}` (expected lqr or scripted)"),
                ))
            }
        };
        let learner = self.learner.validate(&environment)?;
        let loss = match self.loss {
            None => LossSpec::for_env(&environment),
            Some(raw) => raw.validate(&environment)?,
        };

        if self.algorithms.is_empty() {
            return Err(field("algorithms", "need at least one algorithm"));
        }
        let mut algorithms = Vec::new();
        for (i, raw) in self.algorithms.into_iter().enumerate() {
            algorithms.push(raw.validate(&format!("algorithms[{i}]"), space)?);
        }
        let mut labels: Vec<String> = algorithms.iter().map(|a| a.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(field(
                "algorithms",
                format!("label `{}` used twice; set `name` to tell them apart", w[0]),
            ));
        }

        let cfg = ExperimentConfig {
            experiment: self.experiment,
            environment,
            supervisor,
            learner,
            loss,
            horizon: self.horizon,
            algorithms,
            seeds,
            eval_rollouts: self.eval_rollouts,
            output_dir: self.output_dir,
            subsample: self.subsample,
            save_artifacts: self.save_artifacts,
        };
        cfg.build_supervisor()
            .map_err(|e| prefixed("supervisor", e))?;
        Ok(cfg)
    }
}

impl RawEnvironment {
    fn validate(self) -> Result<Environment> {
        let continuous_fields = [
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("process_noise_std", self.process_noise_std.is_some()),
            ("x0_mean", self.x0_mean.is_some()),
            ("x0_std", self.x0_std.is_some()),
            ("q", self.q.is_some()),
            ("r", self.r.is_some()),
        ];
        let grid_fields = [
            ("width", self.width.is_some()),
            ("height", self.height.is_some()),
            ("goal", self.goal.is_some()),
            ("slip", self.slip.is_some()),
            ("start", self.start.is_some()),
        ];
        let reject = |fields: &[(&str, bool)], kind: &str| -> Result<()> {
            match fields.iter().find(|f| f.1) {
                Some((name, _)) => Err(field(
                    &format!("environment.{name}"),
                    format!("not used by `{kind}`"),
                )),
                None => Ok(()),
            }
        };
        match self.kind.as_str() {
            "pointmass" => {
                reject(&grid_fields, "pointmass")?;
                match self.preset.as_deref() {
                    None | Some("double_integrator") => {}
                    Some(other) => {
                        return Err(field(
                            "environment.preset",
                            format!("unknown preset `{other}` (expected double_integrator)"),
                        ))
                    }
                }
                let base = LinearPointMassEnv::double_integrator();
                let a = self
                    .a
                    .map_or(Ok(base.a().clone()), |m| matrix("environment.a", &m))?;
                let b = self
                    .b
                    .map_or(Ok(base.b().clone()), |m| matrix("environment.b", &m))?;
                let q = self
                    .q
                    .map_or(Ok(base.q().clone()), |m| matrix("environment.q", &m))?;
                let r = self
                    .r
                    .map_or(Ok(base.r().clone()), |m| matrix("environment.r", &m))?;
                let x0_mean = self
                    .x0_mean
                    .map_or(base.x0_mean().clone(), DVector::from_vec);
                let env = LinearPointMassEnv::new(
                    a,
                    b,
                    self.process_noise_std.unwrap_or(base.process_noise_std()),
                    x0_mean,
                    self.x0_std.unwrap_or(base.x0_std()),
                    q,
                    r,
                )
                .map_err(|e| prefixed("environment", e))?;
                Ok(Environment::PointMass(env))
            }
            "gridworld" => {
                reject(&continuous_fields, "gridworld")?;
                if self.preset.is_some() {
                    return Err(field("environment.preset", "not used by `gridworld`"));
                }
                let goal = self.goal.unwrap_or([2, 2]);
                let start = match self.start {
                    Some([x, y]) => StartDistribution::Fixed { x, y },
                    None => StartDistribution::UniformNonGoal,
                };
                let g = GridWorldEnv::new(
                    self.width.unwrap_or(3),
                    self.height.unwrap_or(3),
                    (goal[0], goal[1]),
                    self.slip.unwrap_or(0.0),
                    start,
                )
                .map_err(|e| prefixed("environment", e))?;
                Ok(Environment::Grid(g))
            }
            other => Err(field(
                "environment.kind",
                format!("unknown environment `{other}` (expected pointmass or gridworld)"),
            )),
        }
    }
}

impl RawLearner {
    fn validate(self, env: &Environment) -> Result<LearnerSpec> {
        let spec = match self.kind.as_str() {
            "continuous_ridge" => {
                if !env.is_continuous() {
                    return Err(field("learner.kind", "ridge regression needs a continuous environment"));
                }
                if self.default_action.is_some() {
                    return Err(field("learner.default_action", "not used by `continuous_ridge`"));
                }
                let features = self.features.map_or(FeatureMap::Identity, FeatureMap::Select);
                features
                    .check(env.state_dim())
                    .map_err(|e| prefixed("learner.features", e))?;
                LearnerSpec::ContinuousRidge {
                    lambda: self.lambda.ok_or_else(|| field("learner.lambda", "missing"))?,
                    features,
                    fit_bias: self.fit_bias.unwrap_or(true),
                }
            }
            "discrete_tabular_majority" => {
                if env.is_continuous() {
                    return Err(field("learner.kind", "the tabular learner needs a discrete environment"));
                }
                for (name, set) in [
                    ("lambda", self.lambda.is_some()),
                    ("features", self.features.is_some()),
                    ("fit_bias", self.fit_bias.is_some()),
                ] {
                    if set {
                        return Err(field(&format!("learner.{name}"), "not used by `discrete_tabular_majority`"));
                    }
                }
                let default_action = self.default_action.unwrap_or(0);
                if let ControlSpace::Discrete { actions } = env.control_space() {
                    if default_action >= actions {
                        return Err(field("learner.default_action", format!("must be below {actions}")));
                    }
                }
                LearnerSpec::DiscreteTabularMajority { default_action }
            }
            other => {
                return Err(field(
                    "learner.kind",
                    format!("unknown learner `{other}` (expected continuous_ridge or discrete_tabular_majority)"),
                ))
            }
        };
        spec.validate().map_err(|e| prefixed("learner", e))?;
        Ok(spec)
    }
}

impl RawLoss {
    fn validate(self, env: &Environment) -> Result<LossSpec> {
        match self.kind.as_str() {
            "squared_l2" if env.is_continuous() => {
                if let Some(c) = self.normalizer {
                    if !(c.is_finite() && c > 0.0) {
                        return Err(field("loss.normalizer", "must be positive"));
                    }
                }
                Ok(LossSpec::SquaredL2 {
                    normalizer: self.normalizer,
                })
            }
            "zero_one" if self.normalizer.is_some() => {
                Err(field("loss.normalizer", "not used by `zero_one`"))
            }
            "zero_one" => Ok(LossSpec::ZeroOne),
            "squared_l2" => Err(field("loss.kind", "squared_l2 needs continuous controls")),
            other => Err(field(
                "loss.kind",
                format!("unknown loss `{other}` (expected squared_l2 or zero_one)"),
            )),
        }
    }
}

impl RawAlpha {
    fn validate(self, path: &str) -> Result<AlphaSpec> {
        let value = |v: Option<f64>| v.ok_or_else(|| field(&format!("{path}.value"), "missing"));
        let spec = match self.kind.as_str() {
            "absolute" => AlphaSpec::Absolute(value(self.value)?),
            "trace_multiple" => AlphaSpec::TraceMultiple(value(self.value)?),
            "current_estimate" if self.value.is_some() => {
                return Err(field(&format!("{path}.value"), "not used by `current_estimate`"))
            }
            "current_estimate" => AlphaSpec::CurrentEstimate,
            other => {
                return Err(field(
                    &format!("{path}.kind"),
                    format!("unknown alpha rule `{other}` (expected absolute, trace_multiple or current_estimate)"),
                ))
            }
        };
        spec.validate().map_err(|e| prefixed(path, e))?;
        Ok(spec)
    }
}

impl RawNoise {
    fn validate(self, path: &str, space: ControlSpace) -> Result<NoiseParam> {
        let psi = match (self.family.as_str(), self.sigma, self.scale, self.eps) {
            ("gaussian", Some(sigma), None, None) => {
                NoiseParam::gaussian(matrix(&format!("{path}.sigma"), &sigma)?)
            }
            ("isotropic", None, Some(scale), None) => match space {
                ControlSpace::Continuous { dim } => NoiseParam::isotropic(dim, scale),
                ControlSpace::Discrete { .. } => {
                    return Err(field(path, "isotropic noise needs continuous controls"))
                }
            },
            ("eps_greedy", None, None, Some(eps)) => NoiseParam::eps_greedy(eps),
            ("gaussian", ..) => return Err(field(path, "gaussian noise takes exactly `sigma`")),
            ("isotropic", ..) => return Err(field(path, "isotropic noise takes exactly `scale`")),
            ("eps_greedy", ..) => return Err(field(path, "eps_greedy noise takes exactly `eps`")),
            (other, ..) => {
                return Err(field(
                    &format!("{path}.family"),
                    format!(
                    "unknown noise family `{other}` (expected gaussian, isotropic or eps_greedy)"
                ),
                ))
            }
        }
        .map_err(|e| prefixed(path, e))?;
        psi.check_space(space).map_err(|e| prefixed(path, e))?;
        Ok(psi)
    }
}

impl RawAlgorithm {
    fn validate(self, path: &str, space: ControlSpace) -> Result<AlgorithmConfig> {
        let kind: AlgorithmKind = self
            .kind
            .parse()
            .map_err(|e| prefixed(&format!("{path}.kind"), e))?;
        let only = |name: &str, set: bool, allowed: &[AlgorithmKind]| -> Result<()> {
            if set && !allowed.contains(&kind) {
                return Err(field(
                    &format!("{path}.{name}"),
                    format!("not used by `{}`", kind.name()),
                ));
            }
            Ok(())
        };
        use AlgorithmKind::*;
        only("alpha", self.alpha.is_some(), &[Dart])?;
        only("initial_noise", self.initial_noise.is_some(), &[Dart])?;
        only("force_zero_noise", self.force_zero_noise, &[Dart])?;
        only("dagger_beta", self.dagger_beta.is_some(), &[Dagger])?;
        only(
            "retrain_iterations",
            self.retrain_iterations.is_some(),
            &[Dagger],
        )?;
        only(
            "dagger_bootstrap",
            self.dagger_bootstrap.is_some(),
            &[Dagger],
        )?;
        only(
            "isotropic_scale",
            self.isotropic_scale.is_some(),
            &[Isotropic],
        )?;
        only("fixed_noise", self.fixed_noise.is_some(), &[Isotropic])?;
        if kind == Isotropic && matches!(space, ControlSpace::Discrete { .. }) {
            return Err(field(
                &format!("{path}.kind"),
                "isotropic needs a continuous environment",
            ));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(|c: char| c == ',' || c == '/' || c.is_whitespace())
            {
                return Err(field(
                    &format!("{path}.name"),
                    "must be non-empty without commas, slashes or spaces",
                ));
            }
        }

        let mut cfg = AlgorithmConfig::new(kind, self.demos_per_iteration, self.iterations);
        cfg.name = self.name;
        cfg.demo_schedule = self.demo_schedule;
        if let Some(a) = self.alpha {
            cfg.alpha = a.validate(&format!("{path}.alpha"))?;
        }
        if let Some(b) = self.dagger_beta {
            cfg.dagger_beta = b;
        }
        if let Some(n) = self.initial_noise {
            cfg.initial_noise = Some(n.validate(&format!("{path}.initial_noise"), space)?);
        }
        if let Some(s) = self.isotropic_scale {
            cfg.isotropic_scale = s;
        }
        if let Some(n) = self.fixed_noise {
            cfg.fixed_noise = Some(n.validate(&format!("{path}.fixed_noise"), space)?);
        }
        cfg.retrain_iterations = self.retrain_iterations;
        cfg.force_zero_noise = self.force_zero_noise;
        if let Some(b) = self.dagger_bootstrap {
            cfg.dagger_bootstrap = b;
        }
        cfg.checkpoints = self.checkpoints;
        cfg.validate().map_err(|e| prefixed(path, e))?;
        Ok(cfg)
    }
}
