use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{execute_jobs, write_outcomes, ExperimentOutput, RunResult};
use crate::algorithms::{AlgorithmConfig, AlgorithmKind};
use crate::domain::{create_new, tag, ControlSpace, NoiseParam, SeedTree};
use crate::error::{Error, Result};
use crate::noise::wishart_random_covariance;

/// Trace multipliers of the random-covariance variants, relative to the
/// mean trace DART converged to.
pub const LEVELS: [(&str, f64); 3] = [
    ("wishart-low", 0.01),
    ("wishart-matched", 1.0),
    ("wishart-high", 100.0),
];

/// Per-variant summary over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    /// `None` for DART and BC, whose noise is not drawn at random.
    pub target_trace: Option<f64>,
    /// Covariate shift at the final checkpoint, one value per seed.
    pub final_shift: Vec<f64>,
    /// Mean collection reward over all iterations, one value per seed.
    pub collection_reward: Vec<f64>,
}

impl VariantSummary {
    pub fn mean_shift(&self) -> f64 {
        mean(&self.final_shift)
    }

    pub fn mean_collection_reward(&self) -> f64 {
        mean(&self.collection_reward)
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub matched_trace: f64,
    /// DART, BC, then the random covariances from low to high.
    pub variants: Vec<VariantSummary>,
    pub output: ExperimentOutput,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// Range of per-seed DART final shifts.
    pub fn dart_band(&self) -> (f64, f64) {
        let v = &self.variants[0].final_shift;
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Compares DART against fixed random covariances whose trace is set
/// relative to DART's final estimate. Uses the first DART entry of the
/// configuration; BC and every random variant reuse its data budget. Each
/// seed draws its own covariance on the Wishart stream.
pub fn wishart_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<AblationReport> {
    let ControlSpace::Continuous { dim } = cfg.environment.control_space() else {
        return Err(Error::Config(
            "the covariance ablation needs a continuous environment".into(),
        ));
    };
    let dart = cfg
        .algorithms
        .iter()
        .find(|a| a.kind == AlgorithmKind::Dart)
        .cloned()
        .ok_or_else(|| Error::Config("the covariance ablation needs a dart algorithm".into()))?;
    let variant_of = |kind: AlgorithmKind, name: &str| AlgorithmConfig {
        kind,
        name: Some(name.to_string()),
        alpha: dart.alpha,
        initial_noise: None,
        fixed_noise: None,
        isotropic_scale: 0.0,
        ..dart.clone()
    };
    let bc = variant_of(AlgorithmKind::BehaviorCloning, "bc");

    let mut jobs = Vec::new();
    for alg in [&dart, &bc] {
        jobs.extend(cfg.seeds.iter().map(|&s| (alg.clone(), s)));
    }
    let mut outcomes = execute_jobs(cfg, jobs)?;
    let base: Vec<RunResult> = outcomes
        .iter()
        .map(|(alg, seed, r)| match r {
            Ok(r) => Ok(r.clone()),
            Err(e) => Err(Error::Config(format!("{alg} (seed {seed}) failed: {e}"))),
        })
        .collect::<Result<_>>()?;
    let n_seeds = cfg.seeds.len();
    let matched_trace = mean(
        &base[..n_seeds]
            .iter()
            .map(|r| {
                r.output
                    .trace
                    .iterations
                    .last()
                    .map_or(0.0, |rec| rec.noise.magnitude())
            })
            .collect::<Vec<_>>(),
    );

    let mut jobs = Vec::new();
    for (level, (name, factor)) in LEVELS.iter().enumerate() {
        for &seed in &cfg.seeds {
            let mut rng = SeedTree::new(seed)
                .child(tag::WISHART)
                .child(level as u64)
                .rng();
            let sigma = wishart_random_covariance(dim, factor * matched_trace, &mut rng)?;
            let mut alg = variant_of(AlgorithmKind::Isotropic, name);
            alg.fixed_noise = Some(NoiseParam::gaussian(sigma)?);
            jobs.push((alg, seed));
        }
    }
    outcomes.extend(execute_jobs(cfg, jobs)?);

    let output = write_outcomes(cfg, outcomes, out_dir)?;
    let mut names = vec![(dart.label(), None), ("bc".to_string(), None)];
    names.extend(
        LEVELS
            .iter()
            .map(|(n, f)| (n.to_string(), Some(f * matched_trace))),
    );
    let variants: Vec<VariantSummary> = names
        .into_iter()
        .enumerate()
        .map(|(i, (variant, target_trace))| {
            let runs = &output.runs[i * n_seeds..(i + 1) * n_seeds];
            VariantSummary {
                variant,
                target_trace,
                final_shift: runs
                    .iter()
                    .map(|r| {
                        r.output
                            .trace
                            .iterations
                            .iter()
                            .rev()
                            .find_map(|rec| rec.eval.as_ref().map(|e| e.shift))
                            .unwrap_or(f64::NAN)
                    })
                    .collect(),
                collection_reward: runs
                    .iter()
                    .map(|r| {
                        let it = &r.output.trace.iterations;
                        it.iter().map(|rec| rec.collection_reward).sum::<f64>() / it.len() as f64
                    })
                    .collect(),
            }
        })
        .collect();
    write_summary(&out_dir.join("ablation.csv"), &variants)?;
    Ok(AblationReport {
        matched_trace,
        variants,
        output,
    })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    variant: &'a str,
    target_trace: Option<f64>,
    mean_final_shift: f64,
    mean_collection_reward: f64,
    n_seeds: usize,
}

fn write_summary(path: &Path, variants: &[VariantSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_new(path)?);
    for v in variants {
        w.serialize(SummaryRow {
            variant: &v.variant,
            target_trace: v.target_trace,
            mean_final_shift: v.mean_shift(),
            mean_collection_reward: v.mean_collection_reward(),
            n_seeds: v.final_shift.len(),
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
