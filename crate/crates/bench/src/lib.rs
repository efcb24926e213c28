//! Fixtures shared by the benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satbo_core::bo::{bits_to_point, init_ci, BoConfig, BoState};
use satbo_core::cnf::{Clause, CnfFormula, Literal};
use satbo_core::dpll::{sample_solutions, SamplerConfig, WeightVector};
use satbo_core::harness::Instance;
use satbo_core::scenario::{coverage_of_bits, gen_binomial_model};

/// Uniform random 3-CNF.
pub fn random_3cnf(n: usize, m: usize, seed: u64) -> CnfFormula {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<u32> = (1..=n as u32).collect();
    let clauses = (0..m)
        .map(|_| {
            Clause::new(vars.choose_multiple(&mut r, 3).map(|&v| Literal::new(v, r.random_bool(0.5))))
                .expect("distinct variables")
        })
        .collect();
    CnfFormula::new(n, clauses)
}

pub fn generated(vars: usize, seed: u64) -> Instance {
    Instance::generate(vars, None, seed).expect("generator succeeds")
}

/// A trust-region state holding one sampled round of a generated instance.
pub fn bo_state(vars: usize, seed: u64) -> BoState {
    let inst = generated(vars, seed);
    let model = gen_binomial_model(vars, 0.5, seed).expect("valid model");
    let set = sample_solutions(
        &inst.formula,
        &WeightVector::uniform(vars),
        &SamplerConfig { seed, ..SamplerConfig::default() },
    )
    .expect("sampler runs");
    let points: Vec<Vec<f64>> = set.solutions.iter().map(|s| bits_to_point(s)).collect();
    let values: Vec<f64> = set
        .solutions
        .iter()
        .map(|s| coverage_of_bits(&model, s).expect("lengths match"))
        .collect();
    init_ci(&points, &values, BoConfig { seed, ..BoConfig::default() }).expect("non-empty round")
}
