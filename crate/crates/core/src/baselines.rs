//! Comparison samplers: WalkSAT local search and uniform random guessing.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cnf::CnfFormula;
use crate::dpll::{SampleSet, WeightVector};
use crate::seeding::rng;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("noise {0} is outside [0, 1]")]
    Noise(f64),
    #[error("weight vector has {got} entries, formula has {expected} variables")]
    LengthMismatch { expected: usize, got: usize },
    #[error("max_num must be at least 1")]
    ZeroMaxNum,
    #[error("no stopping condition: set a time budget, a sample cap or a draw cap")]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSatConfig {
    /// Flips per try; `None` means `100 · n`.
    pub max_flips: Option<usize>,
    pub noise: f64,
    pub seed: u64,
    pub max_num: usize,
    /// Restarts before giving up; `None` means unlimited.
    pub max_tries: Option<usize>,
    pub time_budget: Option<Duration>,
}

impl Default for WalkSatConfig {
    fn default() -> Self {
        WalkSatConfig {
            max_flips: None,
            noise: 0.5,
            seed: 0,
            max_num: 30,
            max_tries: None,
            time_budget: Some(Duration::from_secs(10)),
        }
    }
}

struct WalkState<'f> {
    formula: &'f CnfFormula,
    occurs: Vec<Vec<usize>>,
    values: Vec<bool>,
    true_count: Vec<u32>,
    unsat: Vec<usize>,
    unsat_pos: Vec<usize>,
}

const NOT_LISTED: usize = usize::MAX;

impl<'f> WalkState<'f> {
    fn new(formula: &'f CnfFormula) -> Self {
        let mut occurs = vec![Vec::new(); formula.num_vars()];
        for (ci, clause) in formula.clauses().iter().enumerate() {
            for lit in clause.literals() {
                occurs[lit.index()].push(ci);
            }
        }
        let m = formula.num_clauses();
        WalkState {
            formula,
            occurs,
            values: vec![false; formula.num_vars()],
            true_count: vec![0; m],
            unsat: Vec::new(),
            unsat_pos: vec![NOT_LISTED; m],
        }
    }

    fn reset(&mut self, values: Vec<bool>) {
        self.values = values;
        self.unsat.clear();
        for (ci, clause) in self.formula.clauses().iter().enumerate() {
            let c = clause
                .literals()
                .iter()
                .filter(|l| l.eval(self.values[l.index()]))
                .count() as u32;
            self.true_count[ci] = c;
            self.unsat_pos[ci] = NOT_LISTED;
            if c == 0 {
                self.mark_unsat(ci);
            }
        }
    }

    fn mark_unsat(&mut self, ci: usize) {
        self.unsat_pos[ci] = self.unsat.len();
        self.unsat.push(ci);
    }

    fn mark_sat(&mut self, ci: usize) {
        let pos = self.unsat_pos[ci];
        let last = *self.unsat.last().expect("listed clause");
        self.unsat.swap_remove(pos);
        if last != ci {
            self.unsat_pos[last] = pos;
        }
        self.unsat_pos[ci] = NOT_LISTED;
    }

    /// Clauses that flipping `var` would leave with no true literal.
    fn break_count(&self, var: usize) -> usize {
        let value = self.values[var];
        self.occurs[var]
            .iter()
            .filter(|&&ci| {
                self.true_count[ci] == 1
                    && self.formula.clauses()[ci]
                        .literals()
                        .iter()
                        .any(|l| l.index() == var && l.eval(value))
            })
            .count()
    }

    fn flip(&mut self, var: usize) {
        self.values[var] = !self.values[var];
        let value = self.values[var];
        for k in 0..self.occurs[var].len() {
            let ci = self.occurs[var][k];
            let lit = *self.formula.clauses()[ci]
                .literals()
                .iter()
                .find(|l| l.index() == var)
                .expect("occurrence list is consistent");
            if lit.eval(value) {
                self.true_count[ci] += 1;
                if self.true_count[ci] == 1 {
                    self.mark_sat(ci);
                }
            } else {
                self.true_count[ci] -= 1;
                if self.true_count[ci] == 0 {
                    self.mark_unsat(ci);
                }
            }
        }
    }

    fn pick_var(&self, ci: usize, noise: f64, rng: &mut ChaCha8Rng) -> usize {
        let lits = self.formula.clauses()[ci].literals();
        if rng.random_bool(noise) {
            return lits[rng.random_range(0..lits.len())].index();
        }
        let mut best = usize::MAX;
        let mut pool = Vec::new();
        for lit in lits {
            let b = self.break_count(lit.index());
            if b < best {
                best = b;
                pool.clear();
            }
            if b == best {
                pool.push(lit.index());
            }
        }
        pool[rng.random_range(0..pool.len())]
    }
}

/// Runs WalkSAT tries until `max_num` solutions are found or a limit is hit.
/// Each try starts from an assignment with `P(xᵢ = true) = δᵢ`; a try that
/// reaches a model contributes it as one sample.
pub fn walksat_sample(
    formula: &CnfFormula,
    delta: &WeightVector,
    cfg: &WalkSatConfig,
) -> Result<SampleSet, BaselineError> {
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(BaselineError::Noise(cfg.noise));
    }
    if delta.len() != formula.num_vars() {
        return Err(BaselineError::LengthMismatch {
            expected: formula.num_vars(),
            got: delta.len(),
        });
    }
    if cfg.max_num == 0 {
        return Err(BaselineError::ZeroMaxNum);
    }
    let mut out = SampleSet::default();
    if formula.clauses().iter().any(|c| c.is_empty()) {
        out.exhausted = true;
        return Ok(out);
    }
    if cfg.time_budget.is_none() && cfg.max_tries.is_none() {
        return Err(BaselineError::Unbounded);
    }
    let deadline = cfg.time_budget.map(|b| Instant::now() + b);
    let max_flips = cfg.max_flips.unwrap_or(100 * formula.num_vars());
    let mut rng = rng(cfg.seed);
    let mut state = WalkState::new(formula);

    'tries: while out.solutions.len() < cfg.max_num {
        if cfg.max_tries.is_some_and(|t| out.stats.draws >= t as u64) {
            break;
        }
        out.stats.draws += 1;
        let start = delta.as_slice().iter().map(|&d| rng.random_bool(d)).collect();
        state.reset(start);
        let mut flips = 0;
        loop {
            if state.unsat.is_empty() {
                debug_assert!(formula.is_satisfied_by(&state.values));
                out.solutions.push(state.values.clone());
                out.free_counts.push(0);
                break;
            }
            if flips >= max_flips {
                break;
            }
            if flips % 1024 == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                out.timed_out = true;
                break 'tries;
            }
            let ci = state.unsat[rng.random_range(0..state.unsat.len())];
            let var = state.pick_var(ci, cfg.noise, &mut rng);
            state.flip(var);
            flips += 1;
            out.stats.flips += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomConfig {
    pub time_budget: Option<Duration>,
    /// Stop after this many accepted samples.
    pub max_num: Option<usize>,
    /// Stop after this many drawn assignments.
    pub max_draws: Option<u64>,
    pub seed: u64,
}

/// Draws uniform full assignments and keeps the satisfying ones.
pub fn random_sample(formula: &CnfFormula, cfg: &RandomConfig) -> Result<SampleSet, BaselineError> {
    if cfg.time_budget.is_none() && cfg.max_num.is_none() && cfg.max_draws.is_none() {
        return Err(BaselineError::Unbounded);
    }
    if cfg.max_num == Some(0) {
        return Err(BaselineError::ZeroMaxNum);
    }
    let deadline = cfg.time_budget.map(|b| Instant::now() + b);
    let mut rng = rng(cfg.seed);
    let mut out = SampleSet::default();
    let n = formula.num_vars();
    let mut bits = vec![false; n];
    loop {
        if cfg.max_num.is_some_and(|m| out.solutions.len() >= m)
            || cfg.max_draws.is_some_and(|m| out.stats.draws >= m)
        {
            break;
        }
        if out.stats.draws % 256 == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
            out.timed_out = true;
            break;
        }
        out.stats.draws += 1;
        for b in bits.iter_mut() {
            *b = rng.random();
        }
        if formula.is_satisfied_by(&bits) {
            out.solutions.push(bits.clone());
            out.free_counts.push(0);
        }
    }
    Ok(out)
}
