use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dart_core::harness::{
    emit_curves, resolve_out_dir, run_experiment, run_oracle_suite, wishart_ablation,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "dart",
    version,
    about = "Noise-injection imitation learning experiments"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to a TOML file, or `preset:NAME`.
    config: String,
    /// Comma-separated seeds replacing the configured ones.
    #[arg(long, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "DART_OUT_ROOT", hide_env_values = true)]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm of an experiment over its seeds.
    Run(RunArgs),
    /// Check the analytic identities and bounds against brute force.
    Oracle,
    /// Aggregate one metric of a results file over seeds.
    Curves {
        results: PathBuf,
        metric: String,
        /// Defaults to `curves-<metric>.csv` next to the results file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare DART against random covariances of related trace.
    Ablation(RunArgs),
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg =
        ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config))?;
    if let Some(seeds) = &args.seed_override {
        if seeds.is_empty() {
            bail!("--seed-override needs at least one seed");
        }
        cfg.seeds = seeds.clone();
    }
    let out = resolve_out_dir(&cfg, args.out_dir.clone(), args.out_root.clone());
    Ok((cfg, out))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let (cfg, out) = load(&args)?;
            let output = run_experiment(&cfg, &out)?;
            println!(
                "{} runs, {} rows written to {}",
                output.runs.len(),
                output.table.rows.len(),
                output.out_dir.join("results.csv").display()
            );
        }
        Command::Oracle => {
            let report = run_oracle_suite()?;
            print!("{report}");
            if !report.all_passed() {
                bail!("oracle suite failed");
            }
        }
        Command::Curves {
            results,
            metric,
            out,
        } => {
            let out = out.unwrap_or_else(|| results.with_file_name(format!("curves-{metric}.csv")));
            let points = emit_curves(&results, &metric, &out)?;
            let mut text = String::from("algorithm,n_demos,mean,stderr,n_seeds\n");
            for p in &points {
                text += &format!(
                    "{},{},{},{},{}\n",
                    p.algorithm, p.n_demos, p.mean, p.stderr, p.n_seeds
                );
            }
            write_stdout(&text)?;
        }
        Command::Ablation(args) => {
            let (cfg, out) = load(&args)?;
            let report = wishart_ablation(&cfg, &out)?;
            println!("matched trace {:.6}", report.matched_trace);
            let (lo, hi) = report.dart_band();
            println!("dart final shift range [{lo:.4}, {hi:.4}]");
            println!(
                "{:<18} {:>14} {:>12} {:>18}",
                "variant", "target_trace", "mean_shift", "collection_reward"
            );
            for v in &report.variants {
                let trace = v
                    .target_trace
                    .map_or("-".to_string(), |t| format!("{t:.6}"));
                println!(
                    "{:<18} {:>14} {:>12.4} {:>18.4}",
                    v.variant,
                    trace,
                    v.mean_shift(),
                    v.mean_collection_reward()
                );
            }
        }
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.context("writing to stdout"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the thread pool")
            .and_then(|pool| pool.install(|| dispatch(cli.command))),
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
