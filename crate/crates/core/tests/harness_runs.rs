mod common;

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use common::*;
use satbo_core::harness::{
    aggregate_theta, run_ablation, run_satbo, write_reports, AblationPlan, Instance, Objective, Problem, RunConfig,
    Variant,
};
use satbo_core::scenario::{gen_binomial_model, theta, upper_bound, InstanceSummary, ScenarioSpec};
use satbo_core::seeding::derive_seed;

fn short(seed: u64) -> RunConfig {
    RunConfig {
        time_per_round: Duration::from_secs(1),
        total_budget: Duration::from_secs(15),
        seed,
        ..RunConfig::default()
    }
}

#[test]
fn transfer_rules_yield_the_wide_attack() {
    let (inst, log) = transfer();
    let problem = Problem {
        formula: &inst.formula,
        varmap: inst.varmap(),
        objective: Objective::Log { varmap: inst.varmap().unwrap(), log: &log },
    };
    for seed in 0..5 {
        let report = run_satbo(&problem, &RunConfig { max_iter: 3, ..short(seed) }).unwrap();
        assert!(report.rounds.len() <= 3);
        assert_eq!(report.best_value, Some(0.75));
        assert_eq!(report.attack_rule.as_deref(), Some("IF amount <= 10 THEN TAMPER user = vip3"));
        assert_eq!(report.verification_rule.as_deref(), Some("IF amount <= 10 THEN user != vip3"));
    }
}

#[test]
fn small_separable_problems_reach_the_optimum() {
    let mut hits = 0;
    for seed in 0..10u64 {
        let inst = Instance::generate(10, None, 40 + seed).unwrap();
        let model = gen_binomial_model(10, 0.5, 70 + seed).unwrap();
        let best = brute_optimum(&inst.formula, &model).unwrap();
        let problem = Problem { formula: &inst.formula, varmap: inst.varmap(), objective: Objective::Model(&model) };
        let report = run_satbo(&problem, &short(seed)).unwrap();
        if report.best_value == Some(best) {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits} of 10");
}

#[test]
fn optimisation_beats_fixed_weights() {
    let inst = Instance::generate(60, None, 12).unwrap();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let model = gen_binomial_model(60, 0.5, derive_seed(12, &[seed])).unwrap();
        let problem = Problem { formula: &inst.formula, varmap: inst.varmap(), objective: Objective::Model(&model) };
        let c = upper_bound(&model);
        for (bo, out) in [(true, &mut on), (false, &mut off)] {
            let mut cfg = short(seed);
            cfg.ablation.bo = bo;
            let r = run_satbo(&problem, &cfg).unwrap();
            out.push(InstanceSummary { s_star: r.best_value.unwrap(), upper: c });
        }
    }
    let (a, b) = (theta(&on).unwrap(), theta(&off).unwrap());
    assert!(a > b, "with BO {a}, without {b}");
}

fn tiny_plan(dir: PathBuf) -> AblationPlan {
    AblationPlan {
        instances: vec![
            Instance::generate(12, None, 1).unwrap(),
            Instance::generate(14, None, 2).unwrap(),
        ],
        scenarios: vec![ScenarioSpec::Binomial { p: 0.5 }],
        variants: Variant::ALL.to_vec(),
        repeats: 3,
        seed: 21,
        base: RunConfig {
            max_iter: 4,
            samples_per_round: 10,
            time_per_round: Duration::from_secs(5),
            total_budget: Duration::from_secs(20),
            random_max_draws: Some(5000),
            walksat_max_tries: Some(50),
            ..RunConfig::default()
        },
        base_dir: dir,
    }
}

#[test]
fn ablation_matrix_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let records = run_ablation(&tiny_plan(tmp.path().into())).unwrap();
    assert_eq!(records.len(), 48);
    write_reports(&records, tmp.path()).unwrap();

    let runs = fs::read_to_string(tmp.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 49);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9);
    assert_eq!(fs::read_dir(tmp.path().join("traces")).unwrap().count(), 48);
    for v in Variant::ALL {
        let (best, avg) = aggregate_theta(&records, "binomial-0.5", v).unwrap();
        assert!(avg <= best && best <= 1.0);
    }
}

#[test]
fn reports_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let records = run_ablation(&tiny_plan(dir.path().into())).unwrap();
        write_reports(&records, dir.path()).unwrap();
    }
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
