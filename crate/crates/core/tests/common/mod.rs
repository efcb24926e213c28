#![allow(dead_code)]

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use satbo_core::cnf::{Clause, CnfFormula, Literal};
use satbo_core::harness::Instance;
use satbo_core::rules::{EncodeOptions, RuleSet, Transaction};
use satbo_core::scenario::CoverageModel;

pub const TRANSFER_RULES: &str = include_str!("../../fixtures/transfer.rules");
pub const TRANSFER_LOG: &str = include_str!("../../fixtures/transfer_log.csv");

pub fn transfer() -> (Instance, Vec<Transaction>) {
    let rules = RuleSet::parse(TRANSFER_RULES).unwrap();
    let log = rules.parse_transactions(TRANSFER_LOG).unwrap();
    let inst = Instance::from_rules("transfer", rules, None, EncodeOptions::default()).unwrap();
    (inst, log)
}

/// Clauses of `k` distinct variables with random signs.
pub fn random_kcnf(r: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> CnfFormula {
    let vars: Vec<u32> = (1..=n as u32).collect();
    let clauses = (0..m)
        .map(|_| {
            let lits = vars
                .choose_multiple(r, k.min(n))
                .map(|&v| Literal::new(v, r.random_bool(0.5)));
            Clause::new(lits).unwrap()
        })
        .collect();
    CnfFormula::new(n, clauses)
}

pub fn bits_of(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

pub fn all_solutions(f: &CnfFormula) -> Vec<Vec<bool>> {
    let n = f.num_vars();
    assert!(n <= 20);
    (0u64..1 << n)
        .map(|m| bits_of(m, n))
        .filter(|b| f.is_satisfied_by(b))
        .collect()
}

/// Reference unit propagation: rescan every clause until nothing changes.
pub fn naive_propagate(f: &CnfFormula, start: &[Option<bool>]) -> (Vec<Option<bool>>, bool) {
    let mut vals = start.to_vec();
    loop {
        let mut changed = false;
        for c in f.clauses() {
            let mut sat = false;
            let mut open = Vec::new();
            for l in c.literals() {
                match vals[l.index()] {
                    Some(v) if v == l.is_positive() => sat = true,
                    Some(_) => {}
                    None => open.push(*l),
                }
            }
            if sat {
                continue;
            }
            match open.as_slice() {
                [] => return (vals, true),
                [l] => {
                    vals[l.index()] = Some(l.is_positive());
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return (vals, false);
        }
    }
}

/// Exhaustive maximum of the decomposed coverage over the models of `f`.
pub fn brute_optimum(f: &CnfFormula, model: &CoverageModel) -> Option<f64> {
    all_solutions(f)
        .iter()
        .map(|b| {
            b.iter()
                .zip(&model.components)
                .map(|(&x, g)| if x { g[1] } else { g[0] })
                .sum::<f64>()
        })
        .max_by(f64::total_cmp)
}

pub fn clause_strategy(n: u32, max_len: usize) -> impl Strategy<Value = Vec<(u32, bool)>> {
    prop::collection::vec((1..=n, any::<bool>()), 1..=max_len)
}

/// Formulas over `1..=max_n` variables with up to `max_m` clauses.
pub fn formula_strategy(max_n: u32, max_m: usize) -> impl Strategy<Value = CnfFormula> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(clause_strategy(n, 4), 0..=max_m).prop_map(move |cs| {
            let clauses = cs
                .into_iter()
                .filter_map(|c| Clause::new(c.into_iter().map(|(v, s)| Literal::new(v, s))))
                .collect();
            CnfFormula::new(n as usize, clauses)
        })
    })
}

pub fn partial_strategy(n: usize) -> impl Strategy<Value = Vec<Option<bool>>> {
    prop::collection::vec(prop_oneof![Just(None), Just(Some(false)), Just(Some(true))], n)
}
