//! Training loops: DART, Behavior Cloning, DAgger and fixed isotropic noise.
//!
//! All loops share one collection path and one random-stream layout, so
//! algorithms run under the same seed see the same initial states, process
//! noise and evaluation rollouts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{
    collect_demonstrations, collect_rollouts, tag, Collection, Dataset, DatasetMeta, NoiseParam,
    Policy, PolicyParams, RolloutPolicy, SeedTree,
};
use crate::env::{Environment, Supervisor};
use crate::error::{Error, Result};
use crate::learner::{fit, LearnerSpec};
use crate::metrics::{expected_loss_and_reward, LossSpec};
use crate::noise::{estimate_noise, AlphaSpec, NoiseEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Dart,
    #[serde(rename = "bc")]
    BehaviorCloning,
    Dagger,
    Isotropic,
}

impl AlgorithmKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::Dart => "dart",
            AlgorithmKind::BehaviorCloning => "bc",
            AlgorithmKind::Dagger => "dagger",
            AlgorithmKind::Isotropic => "isotropic",
        }
    }

    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::BehaviorCloning,
        AlgorithmKind::Dart,
        AlgorithmKind::Dagger,
        AlgorithmKind::Isotropic,
    ];
}

impl std::str::FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm `{s}` (expected one of bc, dart, dagger, isotropic)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Label used in results; defaults to the kind's name.
    pub name: Option<String>,
    pub demos_per_iteration: usize,
    pub iterations: usize,
    /// Demonstrations per iteration, overriding `demos_per_iteration`.
    pub demo_schedule: Option<Vec<usize>>,
    pub alpha: AlphaSpec,
    /// Probability that the supervisor acts at a DAgger step.
    pub dagger_beta: f64,
    /// Noise for the first DART iteration; `None` is noiseless.
    pub initial_noise: Option<NoiseParam>,
    /// `lambda` in the isotropic baseline's `lambda I`.
    pub isotropic_scale: f64,
    /// Replaces `lambda I` in the isotropic loop.
    pub fixed_noise: Option<NoiseParam>,
    /// 1-based iterations after which DAgger refits; `None` refits every iteration.
    pub retrain_iterations: Option<Vec<usize>>,
    /// Makes DART collect every demonstration without noise.
    pub force_zero_noise: bool,
    /// Whether DAgger starts from one noiseless supervisor demonstration.
    pub dagger_bootstrap: bool,
    /// 1-based iterations at which the current policy is evaluated.
    pub checkpoints: Option<Vec<usize>>,
}

impl AlgorithmConfig {
    pub fn new(kind: AlgorithmKind, demos_per_iteration: usize, iterations: usize) -> Self {
        AlgorithmConfig {
            kind,
            name: None,
            demos_per_iteration,
            iterations,
            demo_schedule: None,
            alpha: AlphaSpec::CurrentEstimate,
            dagger_beta: 0.5,
            initial_noise: None,
            isotropic_scale: 1.0,
            fixed_noise: None,
            retrain_iterations: None,
            force_zero_noise: false,
            dagger_bootstrap: true,
            checkpoints: None,
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn demos_at(&self, iteration: usize) -> usize {
        self.demo_schedule
            .as_ref()
            .map_or(self.demos_per_iteration, |s| s[iteration])
    }

    /// Explicit checkpoints, or `ceil(jK/4)` for `j = 1..4`. The final
    /// iteration is always included.
    pub fn checkpoint_list(&self) -> Vec<usize> {
        let k = self.iterations;
        let mut list = self
            .checkpoints
            .clone()
            .unwrap_or_else(|| (1..=4).map(|j| (j * k).div_ceil(4)).collect());
        list.push(k);
        list.sort_unstable();
        list.dedup();
        list
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        match &self.demo_schedule {
            Some(s) if s.len() != self.iterations => {
                return bad(format!(
                    "demo_schedule has {} entries but iterations = {}",
                    s.len(),
                    self.iterations
                ))
            }
            Some(s) if s.contains(&0) => {
                return bad("demo_schedule entries must be at least 1".into())
            }
            None if self.demos_per_iteration == 0 => {
                return bad("demos_per_iteration must be at least 1".into())
            }
            _ => {}
        }
        self.alpha.validate()?;
        if !(0.0..=1.0).contains(&self.dagger_beta) {
            return bad(format!(
                "dagger_beta must lie in [0, 1], got {}",
                self.dagger_beta
            ));
        }
        if !(self.isotropic_scale.is_finite() && self.isotropic_scale >= 0.0) {
            return bad(format!(
                "isotropic_scale must be finite and >= 0, got {}",
                self.isotropic_scale
            ));
        }
        for list in [&self.retrain_iterations, &self.checkpoints]
            .into_iter()
            .flatten()
        {
            if let Some(i) = list.iter().find(|&&i| i == 0 || i > self.iterations) {
                return bad(format!("iteration {i} is outside 1..={}", self.iterations));
            }
        }
        Ok(())
    }
}

/// Everything an algorithm needs besides its own configuration.
#[derive(Clone, Copy)]
pub struct Setting<'a> {
    pub env: &'a Environment,
    pub sup: &'a Supervisor,
    pub learner: &'a LearnerSpec,
    pub loss: LossSpec,
    pub horizon: usize,
    pub eval_rollouts: usize,
    /// Records kept per collected trajectory.
    pub subsample: Option<usize>,
}

/// Metrics of the policy fit on all data gathered so far.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    /// `E_{p(xi | robot)} J(robot, sup | xi)`.
    pub loss_robot: f64,
    pub loss_robot_stderr: f64,
    /// The same loss on the distribution that collected this iteration's data.
    pub loss_collection: f64,
    pub loss_collection_stderr: f64,
    pub shift: f64,
    pub robot_reward: f64,
    /// Mean per-trajectory loss on the training labels.
    pub train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Noise injected while collecting (zero for DAgger's mixture).
    pub noise: NoiseParam,
    /// Demonstrations in the training set after this iteration.
    pub n_demos: usize,
    pub dataset_size: usize,
    pub collection_reward: f64,
    pub eval: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseUpdate {
    /// 1-based iteration whose demonstrations were held out.
    pub after_iteration: usize,
    pub estimate: NoiseEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub kind: AlgorithmKind,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub noise_updates: Vec<NoiseUpdate>,
    pub final_policy: PolicyParams,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub dataset: Dataset,
}

pub fn run(setting: &Setting<'_>, cfg: &AlgorithmConfig, seed: u64) -> Result<RunOutput> {
    match cfg.kind {
        AlgorithmKind::Dart => run_dart(setting, cfg, seed),
        AlgorithmKind::BehaviorCloning => run_behavior_cloning(setting, cfg, seed),
        AlgorithmKind::Dagger => run_dagger(setting, cfg, seed),
        AlgorithmKind::Isotropic => run_isotropic(setting, cfg, seed),
    }
}

fn expect_kind(cfg: &AlgorithmConfig, kind: AlgorithmKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "configuration is for `{}`, not `{}`",
            cfg.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

/// Noiseless supervisor demonstrations, fit on the aggregate.
pub fn run_behavior_cloning(
    setting: &Setting<'_>,
    cfg: &AlgorithmConfig,
    seed: u64,
) -> Result<RunOutput> {
    expect_kind(cfg, AlgorithmKind::BehaviorCloning)?;
    let zero = NoiseParam::zero_for(setting.env.control_space());
    fixed_noise_loop(setting, cfg, seed, &zero)
}

/// Supervisor demonstrations under constant noise `lambda I` (or the
/// configured fixed covariance).
pub fn run_isotropic(setting: &Setting<'_>, cfg: &AlgorithmConfig, seed: u64) -> Result<RunOutput> {
    expect_kind(cfg, AlgorithmKind::Isotropic)?;
    let crate::domain::ControlSpace::Continuous { dim } = setting.env.control_space() else {
        return Err(Error::Config(
            "the isotropic baseline needs a continuous environment".into(),
        ));
    };
    let psi = match &cfg.fixed_noise {
        Some(psi) => psi.clone(),
        None => NoiseParam::gaussian(DMatrix::identity(dim, dim) * cfg.isotropic_scale)?,
    };
    psi.check_space(setting.env.control_space())?;
    fixed_noise_loop(setting, cfg, seed, &psi)
}

fn fixed_noise_loop(
    setting: &Setting<'_>,
    cfg: &AlgorithmConfig,
    seed: u64,
    psi: &NoiseParam,
) -> Result<RunOutput> {
    let mut run = Run::new(setting, cfg, seed);
    for k in 0..cfg.iterations {
        let c = run.collect_noisy(psi, k)?;
        run.finish_iteration(
            k,
            psi,
            c,
            &RolloutPolicy::noisy(setting.env, setting.sup, psi)?,
        )?;
    }
    run.finish()
}

/// Noise-injected collection with the noise re-estimated on held-out
/// demonstrations after every iteration.
///
/// The demonstrations of iteration `k` are held out from the policy used to
/// estimate the noise for iteration `k + 1`, then merged into the training
/// set. When no earlier data exists, the first `ceil(N/2)` demonstrations
/// train and the rest are held out (with `N = 1` the single demonstration
/// plays both roles).
pub fn run_dart(setting: &Setting<'_>, cfg: &AlgorithmConfig, seed: u64) -> Result<RunOutput> {
    expect_kind(cfg, AlgorithmKind::Dart)?;
    let space = setting.env.control_space();
    let zero = NoiseParam::zero_for(space);
    let mut psi = cfg.initial_noise.clone().unwrap_or_else(|| zero.clone());
    psi.check_space(space)?;
    let mut run = Run::new(setting, cfg, seed);
    let mut first_magnitude = None;
    for k in 0..cfg.iterations {
        let used = if cfg.force_zero_noise {
            zero.clone()
        } else {
            psi.clone()
        };
        let c = run.collect_noisy(&used, k)?;
        if !cfg.force_zero_noise && k + 1 < cfg.iterations {
            let (train, heldout) = if run.train.is_empty() {
                split_first_iteration(&c.dataset)
            } else {
                (run.train.clone(), c.dataset.clone())
            };
            let robot = fit(setting.learner, &train)?;
            let estimate = estimate_noise(
                &heldout,
                &robot,
                space,
                &cfg.alpha,
                first_magnitude,
                setting.horizon,
            )?;
            first_magnitude.get_or_insert(estimate.psi_hat.magnitude());
            psi = estimate.psi_scaled.clone();
            run.noise_updates.push(NoiseUpdate {
                after_iteration: k + 1,
                estimate,
            });
        }
        run.finish_iteration(
            k,
            &used,
            c,
            &RolloutPolicy::noisy(setting.env, setting.sup, &used)?,
        )?;
    }
    run.finish()
}

fn split_first_iteration(ds: &Dataset) -> (Dataset, Dataset) {
    let n = ds.trajectory_count();
    if n == 1 {
        return (ds.clone(), ds.clone());
    }
    let cut = n.div_ceil(2);
    let mut train = Dataset::new(ds.meta.clone());
    let mut heldout = Dataset::new(ds.meta.clone());
    for r in &ds.records {
        if r.trajectory_id < cut {
            train.records.push(r.clone());
        } else {
            heldout.records.push(r.clone());
        }
    }
    (train, heldout)
}

/// Per-step mixtures of supervisor and current robot, labelled by the
/// supervisor and aggregated.
pub fn run_dagger(setting: &Setting<'_>, cfg: &AlgorithmConfig, seed: u64) -> Result<RunOutput> {
    expect_kind(cfg, AlgorithmKind::Dagger)?;
    let space = setting.env.control_space();
    let zero = NoiseParam::zero_for(space);
    let mut run = Run::new(setting, cfg, seed);
    let mut robot = if cfg.dagger_bootstrap {
        let boot = collect_demonstrations(
            setting.env,
            setting.sup,
            &zero,
            1,
            setting.horizon,
            0,
            run.seeds.child(tag::BOOTSTRAP),
        )?;
        let boot = run.subsample(boot.dataset, 0, true);
        run.train.extend(boot);
        run.n_demos = 1;
        fit(setting.learner, &run.train)?
    } else {
        match (
            PolicyParams::zero(space, setting.env.state_dim()),
            setting.learner,
        ) {
            (
                PolicyParams::ContinuousLinear { weights, bias, .. },
                LearnerSpec::ContinuousRidge { features, .. },
            ) => PolicyParams::ContinuousLinear {
                weights: weights
                    .columns(0, features.output_dim(setting.env.state_dim()))
                    .into_owned(),
                bias,
                features: features.clone(),
            },
            (p, _) => p,
        }
    };
    let retrain = |k: usize| {
        cfg.retrain_iterations
            .as_ref()
            .is_none_or(|list| list.contains(&(k + 1)))
    };
    for k in 0..cfg.iterations {
        let behaviour = RolloutPolicy::Mixture {
            sup: setting.sup,
            robot: &robot,
            beta: cfg.dagger_beta,
        };
        let mut c = collect_rollouts(
            setting.env,
            setting.sup,
            &behaviour,
            cfg.demos_at(k),
            setting.horizon,
            k,
            run.seeds.child(tag::COLLECT).child(k as u64),
        )?;
        c.dataset.meta.noise_history.push(zero.clone());
        if k == 0 && cfg.dagger_bootstrap {
            // the bootstrap demonstration holds trajectory id 0 of iteration 0
            for r in &mut c.dataset.records {
                r.trajectory_id += 1;
            }
        }
        run.finish_iteration(k, &zero, c, &behaviour)?;
        if retrain(k) {
            robot = fit(setting.learner, &run.train)?;
        }
    }
    run.finish()
}

/// State shared by the loops.
struct Run<'s, 'a> {
    setting: &'s Setting<'a>,
    cfg: &'s AlgorithmConfig,
    seeds: SeedTree,
    seed: u64,
    train: Dataset,
    n_demos: usize,
    checkpoints: Vec<usize>,
    records: Vec<IterationRecord>,
    noise_updates: Vec<NoiseUpdate>,
}

impl<'s, 'a> Run<'s, 'a> {
    fn new(setting: &'s Setting<'a>, cfg: &'s AlgorithmConfig, seed: u64) -> Self {
        Run {
            setting,
            cfg,
            seeds: SeedTree::new(seed),
            seed,
            train: Dataset::new(DatasetMeta {
                env_id: setting.env.id(),
                horizon: setting.horizon,
                seed,
                noise_history: vec![],
            }),
            n_demos: 0,
            checkpoints: cfg.checkpoint_list(),
            records: Vec::new(),
            noise_updates: Vec::new(),
        }
    }

    fn collect_noisy(&self, psi: &NoiseParam, k: usize) -> Result<Collection> {
        let s = self.setting;
        let mut c = collect_demonstrations(
            s.env,
            s.sup,
            psi,
            self.cfg.demos_at(k),
            s.horizon,
            k,
            self.seeds.child(tag::COLLECT).child(k as u64),
        )?;
        c.dataset = self.subsample(c.dataset, k, false);
        Ok(c)
    }

    fn subsample(&self, ds: Dataset, k: usize, bootstrap: bool) -> Dataset {
        match self.setting.subsample {
            Some(count) => {
                let stream = self.seeds.child(tag::SUBSAMPLE);
                let stream = if bootstrap {
                    stream.child(tag::BOOTSTRAP)
                } else {
                    stream.child(k as u64)
                };
                ds.subsample_per_trajectory(count, stream)
            }
            None => ds,
        }
    }

    /// Merges iteration `k`'s data and evaluates if `k + 1` is a checkpoint.
    fn finish_iteration(
        &mut self,
        k: usize,
        noise: &NoiseParam,
        collection: Collection,
        behaviour: &RolloutPolicy<'_>,
    ) -> Result<()> {
        let reward = collection.mean_reward();
        self.n_demos += collection.trajectories.len();
        let data = if self.cfg.kind == AlgorithmKind::Dagger {
            self.subsample(collection.dataset, k, false)
        } else {
            collection.dataset
        };
        self.train.extend(data);
        let eval = if self.checkpoints.contains(&(k + 1)) {
            Some(self.evaluate(k + 1, behaviour)?)
        } else {
            None
        };
        self.records.push(IterationRecord {
            iteration: k + 1,
            noise: noise.clone(),
            n_demos: self.n_demos,
            dataset_size: self.train.len(),
            collection_reward: reward,
            eval,
        });
        Ok(())
    }

    fn evaluate(&self, iteration: usize, behaviour: &RolloutPolicy<'_>) -> Result<Evaluation> {
        let s = self.setting;
        let robot = fit(s.learner, &self.train)?;
        let (on_robot, robot_reward) = expected_loss_and_reward(
            s.env,
            &RolloutPolicy::Deterministic(&robot),
            &robot,
            s.sup,
            &s.loss,
            s.horizon,
            s.eval_rollouts,
            self.seeds.child(tag::EVAL_ROBOT).child(iteration as u64),
        )?;
        let (on_collection, _) = expected_loss_and_reward(
            s.env,
            behaviour,
            &robot,
            s.sup,
            &s.loss,
            s.horizon,
            s.eval_rollouts,
            self.seeds
                .child(tag::EVAL_COLLECTION)
                .child(iteration as u64),
        )?;
        let train_total: f64 = self
            .train
            .records
            .iter()
            .map(|r| s.loss.step(&robot.act(&r.state), &r.label))
            .sum();
        Ok(Evaluation {
            loss_robot: on_robot.mean,
            loss_robot_stderr: on_robot.stderr,
            loss_collection: on_collection.mean,
            loss_collection_stderr: on_collection.stderr,
            shift: on_robot.mean - on_collection.mean,
            robot_reward: robot_reward.mean,
            train_loss: train_total / self.train.trajectory_count() as f64,
        })
    }

    fn finish(self) -> Result<RunOutput> {
        let final_policy = fit(self.setting.learner, &self.train)?;
        Ok(RunOutput {
            trace: RunTrace {
                algorithm: self.cfg.label(),
                kind: self.cfg.kind,
                seed: self.seed,
                iterations: self.records,
                noise_updates: self.noise_updates,
                final_policy,
            },
            dataset: self.train,
        })
    }
}
