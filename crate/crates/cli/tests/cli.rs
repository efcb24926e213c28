use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const RULES: &str = include_str!("../../core/fixtures/transfer.rules");
const LOG: &str = include_str!("../../core/fixtures/transfer_log.csv");

fn satbo(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_satbo"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "satbo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("transfer.rules"), RULES).unwrap();
    fs::write(dir.path().join("transfer_log.csv"), LOG).unwrap();
    dir
}

#[test]
fn run_emits_trace_rounds_and_rules() {
    let dir = fixture_dir();
    let out = satbo(
        dir.path(),
        &["run", "--instance", "transfer.rules", "--scenario", "log:transfer_log.csv", "--max-iter", "3", "--seed", "4", "--out", "res"],
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("attack rule: IF amount <= 10 THEN TAMPER user = vip3"), "{stdout}");

    let res = dir.path().join("res");
    let rules = fs::read_to_string(res.join("rules.txt")).unwrap();
    assert!(rules.contains("IF amount <= 10 THEN user != vip3"));
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["best_value"], 0.75);
    assert_eq!(trace["rounds"].as_array().unwrap().len(), 3);
    let rounds = fs::read_to_string(res.join("rounds.csv")).unwrap();
    assert!(rounds.starts_with("round,restart,phase,"));
    assert_eq!(rounds.lines().count(), 4);
}

#[test]
fn gen_then_run_on_dimacs() {
    let dir = tempfile::tempdir().unwrap();
    satbo(dir.path(), &["gen", "--vars", "30", "--seed", "2", "--out", "inst/v30"]);
    let cnf = fs::read_to_string(dir.path().join("inst/v30.cnf")).unwrap();
    assert!(cnf.lines().any(|l| l.starts_with("p cnf 30 ")));
    assert!(dir.path().join("inst/v30.rules").exists());

    satbo(
        dir.path(),
        &[
            "run", "--instance", "inst/v30.cnf", "--scenario", "power-law", "--solver", "walksat", "--max-iter", "3",
            "--round-seconds", "1", "--budget-seconds", "5", "--no-rb", "--out", "res",
        ],
    );
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/trace.json")).unwrap()).unwrap();
    assert_eq!(trace["solver"], "walksat");
    assert_eq!(trace["ablation"]["rb"], false);
    assert!(!dir.path().join("res/rules.txt").exists());
}

#[test]
fn gen_without_out_prints_rules() {
    let dir = tempfile::tempdir().unwrap();
    let out = satbo(dir.path(), &["gen", "--vars", "12", "--seed", "5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("TAMPER target"));
}

const ABLATE: &str = r#"
seed = 3
repeats = 2
out = "results"
scenarios = ["binomial", "power-law"]
variants = ["SAT-BO", "SAT-BO4", "WalkSAT-BO", "Random"]

[run]
max_iter = 3
samples = 8
round_seconds = 5
budget_seconds = 15
random_max_draws = 5000
walksat_max_tries = 50

[[instances]]
path = "transfer.rules"

[[instances]]
generate = { vars = 16, seed = 1 }
"#;

fn ablate_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fs::write(dir.join("ablate.toml"), ABLATE).unwrap();
    satbo(dir, &["ablate", "--config", "ablate.toml"]);
    let root = dir.join("results");
    let mut files = Vec::new();
    for sub in [root.clone(), root.join("traces")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                files.push((p.strip_prefix(&root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn ablate_is_byte_identical_across_invocations() {
    let (a, b) = (fixture_dir(), fixture_dir());
    let (x, y) = (ablate_outputs(a.path()), ablate_outputs(b.path()));
    assert!(x.iter().any(|f| f.0 == "summary.csv"));
    assert!(x.iter().any(|f| f.0.ends_with(".json")));
    assert_eq!(x, y);
}

#[test]
fn bad_scenario_fails() {
    let dir = fixture_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_satbo"))
        .args(["run", "--instance", "transfer.rules", "--scenario", "zipf", "--out", "res"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
