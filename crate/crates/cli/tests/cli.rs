use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const SMALL: &[&str] = &[
    "--set",
    "data.spec.n_samples=120",
    "--set",
    "toy_width=12",
    "--set",
    "train.latent_dim=4",
    "--set",
    "batch_size=8",
    "--set",
    "eval.n_gen=40",
    "--set",
    "n_temps=5",
    "--set",
    "n_chains=4",
];

fn equigan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equigan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(equigan(&["train", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(equigan(&["train", "--preset", "toy", "--set", "epochz=1"]).status.code(), Some(2));
    assert_eq!(equigan(&["train", "--preset", "toy", "--set", "lambda_perc=2"]).status.code(), Some(2));
    assert_eq!(equigan(&["train"]).status.code(), Some(2));
    assert_eq!(equigan(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_run_exits_with_one() {
    let dir = tempdir().unwrap();
    let out = equigan(&["evaluate", "--run", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dry_run_prints_resolved_spec() {
    let text = ok(&equigan(&["train", "--preset", "cifar10-ep-mdgan", "--seed", "9", "--epochs", "3", "--dry-run"]));
    assert!(text.contains("lambda_dist = 12.0"), "{text}");
    assert!(text.contains("epochs = 3"), "{text}");
    assert!(text.contains("seed = 9"), "{text}");
}

#[test]
fn train_score_evaluate_report() {
    let dir = tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let printed = ok(&equigan(&with_small(&["train", "--preset", "toy-ep-mdgan", "--epochs", "2", "--out", run_s])));
    assert!(printed.trim().ends_with("manifest.json"));
    assert!(run.join("spec.toml").exists());

    let records = run.join("scores/records.csv");
    let records_s = records.to_str().unwrap();
    let partial = ok(&equigan(&with_small(&[
        "score", "--checkpoint", run_s, "--out", records_s, "--limit", "12", "--max-chunks", "1", "--set", "chunk_size=8",
    ])));
    assert!(partial.contains("8 samples scored"), "{partial}");
    let done = ok(&equigan(&with_small(&[
        "score", "--checkpoint", run_s, "--out", records_s, "--limit", "12", "--set", "chunk_size=8",
    ])));
    assert!(Path::new(done.trim()).exists());

    let json = ok(&equigan(&with_small(&["evaluate", "--run", run_s, "--n-gen", "30"])));
    assert!(json.contains("\"n_gen\": 30"), "{json}");

    let report = dir.path().join("report");
    let figures = ok(&equigan(&["report", run_s, "--out", report.to_str().unwrap()]));
    assert!(figures.lines().any(|l| l.ends_with(".svg")), "{figures}");
}

#[test]
fn sweep_runs_selected_job() {
    let dir = tempdir().unwrap();
    let grid = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sweeps/toy.toml");
    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", grid.to_str().unwrap(), "--out", out.to_str().unwrap(), "--job", "1"];
    args.extend(SMALL.iter().copied());
    ok(&equigan(&args));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.contains("completed"), "{csv}");
    assert_eq!(equigan(&["sweep", grid.to_str().unwrap(), "--job", "7"]).status.code(), Some(2));
}
