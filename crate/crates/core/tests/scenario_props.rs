mod common;

use std::time::Duration;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satbo_core::harness::{run_satbo, Instance, Objective, Problem, RunConfig, SolverKind};
use satbo_core::scenario::{
    coverage_of_bits, gen_binomial_model, gen_instance, gen_powerlaw_model, theta, upper_bound, CoverageModel,
    InstanceSpec, InstanceSummary,
};

fn model_strategy(max_n: usize) -> impl Strategy<Value = CoverageModel> {
    prop::collection::vec([0.0..1e4f64, 0.0..1e4f64], 1..=max_n).prop_map(|c| CoverageModel::custom(c).unwrap())
}

#[allow(clippy::needless_range_loop)]
fn naive_sum(g: &[[f64; 2]], bits: &[bool]) -> f64 {
    let mut total = 0.0;
    for i in 0..g.len() {
        total += if bits[i] { g[i][1] } else { g[i][0] };
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coverage_is_the_per_index_sum((m, mask) in model_strategy(40).prop_flat_map(|m| (Just(m), any::<u64>()))) {
        let n = m.components.len();
        let bits = bits_of(mask, n);
        let expected = naive_sum(&m.components, &bits);
        let got = coverage_of_bits(&m, &bits).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn upper_bound_dominates((m, masks) in model_strategy(40).prop_flat_map(|m| (Just(m), prop::collection::vec(any::<u64>(), 16)))) {
        let c = upper_bound(&m);
        for mask in masks {
            let bits = bits_of(mask, m.components.len());
            prop_assert!(coverage_of_bits(&m, &bits).unwrap() <= c + 1e-9 * c);
        }
    }

    #[test]
    fn theta_ignores_common_scale(
        parts in prop::collection::vec((0.0..1.0f64, 1.0..1e3f64), 1..10),
        scale in 1e-3..1e3f64,
    ) {
        let rows: Vec<InstanceSummary> = parts.iter().map(|&(f, c)| InstanceSummary { s_star: f * c, upper: c }).collect();
        let scaled: Vec<InstanceSummary> = rows.iter().map(|r| InstanceSummary { s_star: r.s_star * scale, upper: r.upper * scale }).collect();
        let (a, b) = (theta(&rows).unwrap(), theta(&scaled).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn dominance_sweep_on_binomial_model() {
    let m = gen_binomial_model(50, 0.5, 4).unwrap();
    let c = upper_bound(&m);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let bits: Vec<bool> = (0..50).map(|_| r.random_bool(0.5)).collect();
        assert!(coverage_of_bits(&m, &bits).unwrap() <= c);
    }
}

#[test]
fn binomial_event_frequency_concentrates() {
    // components with both entries at most 111 come from two draws in [0, 10]
    let m = gen_binomial_model(1000, 0.5, 17).unwrap();
    let small = m
        .components
        .iter()
        .flatten()
        .filter(|&&g| g <= 111.0)
        .count();
    let frac = small as f64 / 2000.0;
    assert!((0.47..=0.53).contains(&frac), "{frac}");
}

#[test]
fn power_law_has_log_many_heavy_entries() {
    let m = gen_powerlaw_model(100, 2).unwrap();
    let heavy = m.components.iter().flatten().filter(|&&g| g > 1.0).count();
    assert_eq!(heavy, 5);
    assert!(m
        .components
        .iter()
        .flatten()
        .all(|&g| g == 1.0 || (1_001_001.0..=4_002_001.0).contains(&g)));
}

#[test]
fn generated_instances_are_satisfiable_and_sized() {
    for seed in 0..5 {
        let g = gen_instance(&InstanceSpec::with_vars(62), seed).unwrap();
        assert_eq!(g.formula.num_vars(), 62);
        let ratio = g.formula.num_clauses() as f64 / 62.0;
        assert!((1.8..=2.1).contains(&ratio), "{ratio}");
    }
}

#[test]
fn saturating_runs_reach_the_brute_force_optimum() {
    let mut rows = Vec::new();
    for k in 0..30u64 {
        let vars = 8 + (k as usize % 7);
        let inst = Instance::generate(vars, None, 500 + k).unwrap();
        let model = gen_binomial_model(vars, 0.5, 900 + k).unwrap();
        let best = brute_optimum(&inst.formula, &model).expect("generated instances are satisfiable");
        let problem = Problem { formula: &inst.formula, varmap: inst.varmap(), objective: Objective::Model(&model) };
        let base = RunConfig {
            max_iter: 1,
            samples_per_round: 1 << vars,
            time_per_round: Duration::from_secs(30),
            total_budget: Duration::from_secs(30),
            seed: k,
            ..RunConfig::default()
        };
        // every assignment is drawn with probability 1 - e^-64
        let random = RunConfig {
            solver: SolverKind::Random,
            random_max_draws: Some(64 << vars),
            ..base.clone()
        };
        let report = run_satbo(&problem, &random).unwrap();
        rows.push(InstanceSummary { s_star: report.best_value.unwrap(), upper: best });

        let dpll = RunConfig { max_iter: 5, samples_per_round: 30, ..base };
        let s = run_satbo(&problem, &dpll).unwrap().best_value.unwrap();
        assert!(s <= best);
    }
    assert_eq!(theta(&rows).unwrap(), 1.0);
}
