use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::algorithms::{run, AlgorithmConfig, RunOutput, RunTrace, Setting};
use crate::domain::{create_new, tag, write_policy_jsonl, RolloutPolicy, SeedTree};
use crate::env::{Environment, Supervisor};
use crate::error::{Error, Result};
use crate::metrics::expected_loss_and_reward;

/// Metrics written for every checkpoint, in output order.
pub const METRICS: [&str; 8] = [
    "loss_robot",
    "loss_collection",
    "shift",
    "train_loss",
    "robot_reward",
    "collection_reward",
    "collection_reward_normalized",
    "noise_magnitude",
];

/// One long-format results row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub algorithm: String,
    pub seed: u64,
    pub iteration: usize,
    pub n_demos: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Rows for every checkpoint of `trace`. `supervisor_reward` is the mean
    /// reward of the noiseless supervisor under the same seed.
    pub fn push_trace(&mut self, experiment: &str, trace: &RunTrace, supervisor_reward: f64) {
        for rec in &trace.iterations {
            let Some(eval) = &rec.eval else { continue };
            let normalized =
                1.0 + (rec.collection_reward - supervisor_reward) / supervisor_reward.abs();
            let values = [
                eval.loss_robot,
                eval.loss_collection,
                eval.shift,
                eval.train_loss,
                eval.robot_reward,
                rec.collection_reward,
                normalized,
                rec.noise.magnitude(),
            ];
            for (metric, value) in METRICS.iter().zip(values) {
                self.rows.push(ResultRow {
                    experiment: experiment.to_string(),
                    algorithm: trace.algorithm.clone(),
                    seed: trace.seed,
                    iteration: rec.iteration,
                    n_demos: rec.n_demos,
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }

    /// Writes a new CSV file; an existing file is never overwritten.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = create_new(path)?;
        let mut w = csv::Writer::from_writer(file);
        if self.rows.is_empty() {
            w.write_record([
                "experiment",
                "algorithm",
                "seed",
                "iteration",
                "n_demos",
                "metric",
                "value",
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(|e| csv_error(path, e))?;
        Ok(ResultsTable { rows })
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Values of `metric` keyed by `(algorithm, seed, iteration)`.
    pub fn values(&self, metric: &str) -> BTreeMap<(String, u64, usize), f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| ((r.algorithm.clone(), r.seed, r.iteration), r.value))
            .collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Mean reward of `m` noiseless supervisor rollouts on the reference stream.
pub fn supervisor_reference_reward(
    env: &Environment,
    sup: &Supervisor,
    horizon: usize,
    m: usize,
    seed: u64,
) -> Result<f64> {
    let (_, reward) = expected_loss_and_reward(
        env,
        &RolloutPolicy::Deterministic(sup),
        sup,
        sup,
        &crate::metrics::LossSpec::for_env(env),
        horizon,
        m,
        SeedTree::new(seed).child(tag::SUPERVISOR_REFERENCE),
    )?;
    Ok(reward.mean)
}

/// Output of one (algorithm, seed) run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub algorithm: String,
    pub seed: u64,
    pub supervisor_reward: f64,
    pub output: RunOutput,
}

/// Runs every (algorithm, seed) pair in parallel. Results come back in
/// configuration order (algorithms, then seeds), each with its own outcome.
pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<(String, u64, Result<RunResult>)>> {
    let jobs = cfg
        .algorithms
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a.clone(), s)))
        .collect();
    execute_jobs(cfg, jobs)
}

/// Runs explicit `(algorithm, seed)` jobs under the configuration's
/// environment, learner and evaluation settings.
pub fn execute_jobs(
    cfg: &ExperimentConfig,
    jobs: Vec<(AlgorithmConfig, u64)>,
) -> Result<Vec<(String, u64, Result<RunResult>)>> {
    let sup = cfg.build_supervisor()?;
    let setting = Setting {
        env: &cfg.environment,
        sup: &sup,
        learner: &cfg.learner,
        loss: cfg.loss,
        horizon: cfg.horizon,
        eval_rollouts: cfg.eval_rollouts,
        subsample: cfg.subsample,
    };
    let mut seeds: Vec<u64> = jobs.iter().map(|j| j.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let references = seeds
        .par_iter()
        .map(|&seed| {
            supervisor_reference_reward(
                &cfg.environment,
                &sup,
                cfg.horizon,
                cfg.eval_rollouts,
                seed,
            )
            .map(|r| (seed, r))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(jobs
        .into_par_iter()
        .map(|(alg, seed)| {
            let result = run(&setting, &alg, seed).map(|output| RunResult {
                algorithm: alg.label(),
                seed,
                supervisor_reward: references[&seed],
                output,
            });
            (alg.label(), seed, result)
        })
        .collect())
}

/// Files produced by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub table: ResultsTable,
    pub runs: Vec<RunResult>,
}

/// Runs the experiment and writes `results.csv`, `noise.csv` and (unless
/// disabled) `datasets/` and `policies/` under `out_dir`. Rows of runs that
/// succeeded are written even when another run fails; the failure is then
/// returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let outcomes = execute(cfg)?;
    write_outcomes(cfg, outcomes, out_dir)
}

pub fn write_outcomes(
    cfg: &ExperimentConfig,
    outcomes: Vec<(String, u64, Result<RunResult>)>,
    out_dir: &Path,
) -> Result<ExperimentOutput> {
    prepare_dir(out_dir)?;
    let mut table = ResultsTable::default();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (alg, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                table.push_trace(&cfg.experiment, &r.output.trace, r.supervisor_reward);
                runs.push(r);
            }
            Err(e) => failures.push(format!("{alg} (seed {seed}): {e}")),
        }
    }
    table.write_csv(&out_dir.join("results.csv"))?;
    write_noise_csv(&out_dir.join("noise.csv"), &cfg.experiment, &runs)?;
    if cfg.save_artifacts {
        for sub in ["datasets", "policies"] {
            std::fs::create_dir_all(out_dir.join(sub))
                .map_err(|e| Error::io(out_dir.join(sub), e))?;
        }
        for r in &runs {
            let stem = format!("{}-seed{}.jsonl", r.algorithm, r.seed);
            r.output
                .dataset
                .write_jsonl(&out_dir.join("datasets").join(&stem))?;
            write_policy_jsonl(
                &out_dir.join("policies").join(&stem),
                &cfg.environment.id(),
                &r.output.trace.final_policy,
            )?;
        }
    }
    if !failures.is_empty() {
        return Err(Error::Config(format!(
            "{} run(s) failed; partial results are in {}: {}",
            failures.len(),
            out_dir.display(),
            failures.join("; ")
        )));
    }
    Ok(ExperimentOutput {
        out_dir: out_dir.to_path_buf(),
        table,
        runs,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join("results.csv");
    if results.exists() {
        return Err(Error::Config(format!(
            "{} already exists; choose a fresh output directory",
            results.display()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct NoiseRow<'a> {
    experiment: &'a str,
    algorithm: &'a str,
    seed: u64,
    after_iteration: usize,
    family: &'static str,
    estimated: f64,
    scaled: f64,
    alpha: f64,
    beta: f64,
    heldout_size: usize,
    isotropic_fallback: bool,
}

fn write_noise_csv(path: &Path, experiment: &str, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_new(path)?);
    let mut any = false;
    for r in runs {
        for u in &r.output.trace.noise_updates {
            any = true;
            let e = &u.estimate;
            w.serialize(NoiseRow {
                experiment,
                algorithm: &r.algorithm,
                seed: r.seed,
                after_iteration: u.after_iteration,
                family: match e.psi_hat {
                    crate::domain::NoiseParam::Gaussian { .. } => "gaussian",
                    crate::domain::NoiseParam::EpsGreedy { .. } => "eps_greedy",
                },
                estimated: e.psi_hat.magnitude(),
                scaled: e.psi_scaled.magnitude(),
                alpha: e.alpha,
                beta: e.beta,
                heldout_size: e.heldout_size,
                isotropic_fallback: e.isotropic_fallback,
            })
            .map_err(|e| csv_error(path, e))?;
        }
    }
    if !any {
        w.write_record([
            "experiment",
            "algorithm",
            "seed",
            "after_iteration",
            "family",
            "estimated",
            "scaled",
            "alpha",
            "beta",
            "heldout_size",
            "isotropic_fallback",
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
