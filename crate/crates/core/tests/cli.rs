use std::path::Path;
use std::process::{Command, Output};

fn dart(args: &[&str], out_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dart"));
    cmd.args(args).env_remove("DART_OUT_ROOT");
    if let Some(root) = out_root {
        cmd.env("DART_OUT_ROOT", root);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_results_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    let o = out.to_str().unwrap();
    let first = dart(
        &[
            "run",
            "preset:gridworld-compare",
            "--seed-override",
            "3,4",
            "--out-dir",
            o,
        ],
        None,
    );
    assert!(first.status.success(), "{}", stderr(&first));
    for file in [
        "results.csv",
        "noise.csv",
        "datasets/dart-seed3.jsonl",
        "policies/bc-seed4.jsonl",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("experiment,algorithm,seed,iteration,n_demos,metric,value\n"));
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.contains(",3,") || l.contains(",4,")));

    let again = dart(&["run", "preset:gridworld-compare", "--out-dir", o], None);
    assert!(!again.status.success());
    assert!(
        stderr(&again).contains("already exists"),
        "{}",
        stderr(&again)
    );
}

#[test]
fn default_output_goes_under_out_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dart(
        &[
            "--jobs",
            "2",
            "run",
            "preset:gridworld-compare",
            "--seed-override",
            "1",
        ],
        Some(tmp.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("gridworld-compare/results.csv").exists());
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"
experiment = "bad"
horizon = 5
seeds = [1]
eval_rollouts = 3

[environment]
kind = "gridworld"
width = 3
height = 3

[supervisor]
kind = "scripted"

[learner]
kind = "discrete_tabular_majority"

[loss]
kind = "zero_one"

[[algorithms]]
kind = "dart"
demos_per_iteration = 0
iterations = 2
"#,
    )
    .unwrap();
    let o = dart(
        &[
            "run",
            path.to_str().unwrap(),
            "--out-dir",
            tmp.path().join("x").to_str().unwrap(),
        ],
        None,
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("algorithms[0]"), "{}", stderr(&o));
    assert!(!tmp.path().join("x/results.csv").exists());

    let missing = dart(&["run", "preset:does-not-exist"], Some(tmp.path()));
    assert!(!missing.status.success());
    assert!(
        stderr(&missing).contains("does-not-exist"),
        "{}",
        stderr(&missing)
    );
}

#[test]
fn curves_aggregate_and_reject_unknown_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    let o = dart(
        &[
            "run",
            "preset:gridworld-compare",
            "--seed-override",
            "1,2,3",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let results = out.join("results.csv");
    let c = dart(&["curves", results.to_str().unwrap(), "shift"], None);
    assert!(c.status.success(), "{}", stderr(&c));
    let text = stdout(&c);
    assert!(text.starts_with("algorithm,n_demos,mean,stderr,n_seeds\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",3")), "{text}");
    assert!(out.join("curves-shift.csv").exists());

    let bad = dart(&["curves", results.to_str().unwrap(), "reward"], None);
    assert!(!bad.status.success());
    assert!(
        stderr(&bad).contains("available: collection_reward"),
        "{}",
        stderr(&bad)
    );
}

#[test]
fn oracle_reports_every_check() {
    let o = dart(&["oracle"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.contains(" PASS ")).count(),
        10,
        "{text}"
    );
    assert!(text.contains("shrink_identity"));
}

#[test]
fn ablation_needs_a_continuous_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dart(&["ablation", "preset:gridworld-compare"], Some(tmp.path()));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("continuous"), "{}", stderr(&o));
}

#[test]
fn ablation_reports_all_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ab");
    let o = dart(
        &[
            "ablation",
            "preset:pointmass-compare",
            "--seed-override",
            "0,1,2",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    for v in [
        "dart",
        "bc",
        "wishart-low",
        "wishart-matched",
        "wishart-high",
    ] {
        assert!(
            summary.lines().any(|l| l.starts_with(&format!("{v},"))),
            "{summary}"
        );
    }
}
