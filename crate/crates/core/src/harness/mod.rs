//! Experiment harness: configuration files, multi-seed runs, CSV output,
//! learning curves, the oracle suite and the random-covariance ablation.

mod ablation;
mod config;
mod curves;
mod oracle;
mod runner;

pub use ablation::{wishart_ablation, AblationReport, VariantSummary};
pub use config::{ExperimentConfig, SupervisorKind, PRESETS};
pub use curves::{curves, emit_curves, CurvePoint};
pub use oracle::{run_oracle_suite, run_oracle_suite_with, OracleCheck, OracleHooks, OracleReport};
pub use runner::{
    execute, execute_jobs, run_experiment, supervisor_reference_reward, write_outcomes,
    ExperimentOutput, ResultRow, ResultsTable, RunResult, METRICS,
};

use std::path::PathBuf;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "DART_OUT_ROOT";

/// `explicit`, else the configured directory, else `$DART_OUT_ROOT/<experiment>`,
/// else `results/<experiment>`.
pub fn resolve_out_dir(
    cfg: &ExperimentConfig,
    explicit: Option<PathBuf>,
    out_root: Option<PathBuf>,
) -> PathBuf {
    explicit
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| {
            out_root
                .unwrap_or_else(|| PathBuf::from("results"))
                .join(&cfg.experiment)
        })
}
