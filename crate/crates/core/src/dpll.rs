//! Adaptive DPLL solution sampler.
//!
//! A chronological DPLL search that keeps going after each solution until it
//! has collected `max_num` of them. Assignment weights `δ` decide which
//! variable is branched on next and with which polarity. Three optional
//! strategies diversify the output:
//!
//! * **RB**: random backtracking to any decision level that still has an
//!   untried branch, once more than half the samples are in and the branch is
//!   deeper than `tv` decisions.
//! * **RFDV**: random polarity flips of decision literals, rarer the stronger
//!   the weight's preference.
//! * **RFIV**: random values for variables left untouched when the formula
//!   becomes satisfied.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cnf::{Assignment, CnfFormula, Literal, Propagator};
use crate::seeding::rng_stream;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("weight vector has {got} entries, formula has {expected} variables")]
    LengthMismatch { expected: usize, got: usize },
    #[error("max_num must be at least 1")]
    ZeroMaxNum,
    #[error("tv must be at least 1")]
    ZeroTv,
    #[error("weight {value} at index {index} is outside [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },
}

/// Per-variable preference for `true`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![0.5; n])
    }

    pub fn new(values: Vec<f64>) -> Result<Self, SamplerError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(SamplerError::WeightOutOfRange { index, value });
        }
        Ok(WeightVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Weight of the 1-indexed variable.
    pub fn get(&self, var: u32) -> f64 {
        self.0[var as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Strategies {
    pub rb: bool,
    pub rfdv: bool,
    pub rfiv: bool,
}

impl Strategies {
    pub const ALL: Strategies = Strategies {
        rb: true,
        rfdv: true,
        rfiv: true,
    };
    pub const NONE: Strategies = Strategies {
        rb: false,
        rfdv: false,
        rfiv: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub max_num: usize,
    /// Decision depth above which random backtracking may fire.
    pub tv: usize,
    /// `None` means no wall-clock limit.
    pub time_budget: Option<Duration>,
    pub seed: u64,
    pub strategies: Strategies,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_num: 30,
            tv: 200,
            time_budget: Some(Duration::from_secs(10)),
            seed: 0,
            strategies: Strategies::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub decisions: u64,
    pub conflicts: u64,
    pub flips: u64,
    pub jumps: u64,
    /// Full assignments drawn or restarts made by the baseline samplers.
    pub draws: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    /// Complete satisfying assignments, in the order found. Duplicates are kept.
    pub solutions: Vec<Vec<bool>>,
    /// For each solution, how many variables were still unassigned when the
    /// formula became satisfied.
    pub free_counts: Vec<u32>,
    /// The search tree was fully explored.
    pub exhausted: bool,
    pub timed_out: bool,
    pub stats: SamplerStats,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn distinct_count(&self) -> usize {
        let mut sorted: Vec<&Vec<bool>> = self.solutions.iter().collect();
        sorted.sort();
        sorted.dedup();
        sorted.len()
    }

    /// Number of full assignments covered by the search leaves that produced
    /// the samples. Leaves of one search are disjoint, so after an exhaustive
    /// run without random backtracking this is the model count.
    pub fn covered_count(&self) -> u128 {
        self.free_counts.iter().map(|&k| 1u128 << k).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionEntry {
    pub literal: Literal,
    /// Both values have been (or are being) explored at this node.
    pub exhausted: bool,
    trail_start: usize,
}

/// Decision stack; entry `i` lives on level `i + 1`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecisionTrail {
    entries: Vec<DecisionEntry>,
}

impl DecisionTrail {
    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[DecisionEntry] {
        &self.entries
    }

    /// Levels whose decision still has an untried branch.
    pub fn open_levels(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.exhausted)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn deepest_open(&self) -> Option<usize> {
        self.entries.iter().rposition(|e| !e.exhausted).map(|i| i + 1)
    }
}

/// Search state: clause bookkeeping plus the decision stack.
#[derive(Debug, Clone)]
pub struct SearchState<'f> {
    prop: Propagator<'f>,
    trail: DecisionTrail,
}

impl<'f> SearchState<'f> {
    pub fn new(formula: &'f CnfFormula) -> Self {
        SearchState {
            prop: Propagator::new(formula),
            trail: DecisionTrail::default(),
        }
    }

    pub fn formula(&self) -> &'f CnfFormula {
        self.prop.formula()
    }

    /// Unit propagation to a fixed point; `false` on conflict.
    pub fn propagate(&mut self) -> bool {
        self.prop.propagate()
    }

    pub fn all_satisfied(&self) -> bool {
        self.prop.all_satisfied()
    }

    pub fn in_conflict(&self) -> bool {
        self.prop.in_conflict()
    }

    /// Opens a new decision level with `lit`.
    pub fn decide(&mut self, lit: Literal) {
        self.push_decision(lit, false);
    }

    fn push_decision(&mut self, lit: Literal, exhausted: bool) {
        self.trail.entries.push(DecisionEntry {
            literal: lit,
            exhausted,
            trail_start: self.prop.trail().len(),
        });
        self.prop.assign(lit);
    }

    pub fn trail(&self) -> &DecisionTrail {
        &self.trail
    }

    pub fn assignment(&self) -> Assignment {
        Assignment::from_values(self.prop.values().to_vec())
    }

    pub fn value(&self, var: u32) -> Option<bool> {
        self.prop.value(var)
    }

    pub fn unassigned_vars(&self) -> impl Iterator<Item = u32> + '_ {
        self.prop
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i as u32 + 1)
    }

    pub fn clause_counters(&self) -> Vec<(u32, u32)> {
        self.prop.clause_counters().collect()
    }

    /// Undoes every assignment made at or above the target level and resumes
    /// there with the other value of that level's decision, now exhausted.
    /// `level == 0` targets the deepest level with an untried branch.
    ///
    /// Returns `false` when no such level exists, i.e. the tree is exhausted.
    pub fn recover_to_level(&mut self, level: usize) -> bool {
        let target = if level == 0 {
            match self.trail.deepest_open() {
                Some(l) => l,
                None => return false,
            }
        } else {
            level
        };
        let entry = match self.trail.entries.get(target - 1) {
            Some(e) if !e.exhausted => *e,
            _ => return false,
        };
        self.prop.backtrack_to(entry.trail_start);
        self.trail.entries.truncate(target - 1);
        self.push_decision(entry.literal.negate(), true);
        true
    }
}

/// Flip threshold for a weight: `min(0.5 / |δ - 0.5|, 50)`, compared against
/// a uniform integer in `[1, 100]`. An indifferent weight flips half the time.
pub fn flip_threshold(weight: f64) -> f64 {
    let dist = (weight - 0.5).abs();
    if dist == 0.0 {
        50.0
    } else {
        (0.5 / dist).min(50.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub literal: Literal,
    pub flipped: bool,
}

/// Picks the next decision literal among `unassigned`.
///
/// The candidates are the variables whose weight is furthest from 0.5; each
/// is oriented by its preference and one is chosen uniformly. With `rfdv` the
/// chosen literal is then negated if a draw `t ∈ [1, 100]` satisfies
/// `t ≤ flip_threshold(δ)`.
pub fn get_candidate(
    unassigned: impl IntoIterator<Item = u32>,
    delta: &WeightVector,
    rfdv: bool,
    choice_rng: &mut ChaCha8Rng,
    flip_rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let mut best = f64::NEG_INFINITY;
    let mut pool: Vec<u32> = Vec::new();
    for var in unassigned {
        let d = (delta.get(var) - 0.5).abs();
        if d > best {
            best = d;
            pool.clear();
            pool.push(var);
        } else if d == best {
            pool.push(var);
        }
    }
    if pool.is_empty() {
        return None;
    }
    let var = pool[choice_rng.random_range(0..pool.len())];
    let weight = delta.get(var);
    let mut literal = Literal::new(var, weight >= 0.5);
    let mut flipped = false;
    if rfdv {
        let t: u32 = flip_rng.random_range(1..=100);
        if f64::from(t) <= flip_threshold(weight) {
            literal = literal.negate();
            flipped = true;
        }
    }
    Some(Candidate { literal, flipped })
}

/// Chooses the level to backtrack to; `0` means chronological.
///
/// With `rb` on, once `2·found > max_num` and the branch holds more than `tv`
/// decisions, draws `t ∈ [1, 100]` and jumps to a uniformly chosen open level
/// when `t < ρ = 10·found / max_num`.
pub fn get_level(
    found: usize,
    max_num: usize,
    trail: &DecisionTrail,
    tv: usize,
    rb: bool,
    rng: &mut ChaCha8Rng,
) -> usize {
    if !rb || 2 * found <= max_num || trail.depth() <= tv {
        return 0;
    }
    let open = trail.open_levels();
    let t: u32 = rng.random_range(1..=100);
    let rho = 10.0 * found as f64 / max_num as f64;
    if f64::from(t) < rho && !open.is_empty() {
        open[rng.random_range(0..open.len())]
    } else {
        0
    }
}

const STREAM_CHOICE: u64 = 0;
const STREAM_FLIP: u64 = 1;
const STREAM_LEVEL: u64 = 2;
const STREAM_FREE: u64 = 3;

/// Collects up to `cfg.max_num` satisfying assignments of `formula`.
///
/// Stops at whichever comes first: enough samples, an exhausted tree, or the
/// time budget. An unsatisfiable formula yields an empty, exhausted set.
pub fn sample_solutions(
    formula: &CnfFormula,
    delta: &WeightVector,
    cfg: &SamplerConfig,
) -> Result<SampleSet, SamplerError> {
    if delta.len() != formula.num_vars() {
        return Err(SamplerError::LengthMismatch {
            expected: formula.num_vars(),
            got: delta.len(),
        });
    }
    if cfg.max_num == 0 {
        return Err(SamplerError::ZeroMaxNum);
    }
    if cfg.tv == 0 {
        return Err(SamplerError::ZeroTv);
    }
    let deadline = cfg.time_budget.map(|b| Instant::now() + b);
    let mut choice_rng = rng_stream(cfg.seed, STREAM_CHOICE);
    let mut flip_rng = rng_stream(cfg.seed, STREAM_FLIP);
    let mut level_rng = rng_stream(cfg.seed, STREAM_LEVEL);
    let mut free_rng = rng_stream(cfg.seed, STREAM_FREE);

    let strategies = cfg.strategies;
    let mut state = SearchState::new(formula);
    let mut out = SampleSet::default();

    loop {
        if out.solutions.len() >= cfg.max_num {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            out.timed_out = true;
            break;
        }
        let consistent = state.propagate();
        if consistent && !state.all_satisfied() {
            let cand = get_candidate(
                state.unassigned_vars(),
                delta,
                strategies.rfdv,
                &mut choice_rng,
                &mut flip_rng,
            )
            .expect("an unsatisfied clause leaves a variable unassigned");
            out.stats.decisions += 1;
            if cand.flipped {
                out.stats.flips += 1;
            }
            log::trace!(
                "decide {} at level {}{}",
                cand.literal,
                state.trail().depth() + 1,
                if cand.flipped { " (flipped)" } else { "" }
            );
            state.decide(cand.literal);
            continue;
        }
        if consistent {
            let (bits, free) = complete_solution(&state, delta, strategies.rfiv, &mut free_rng);
            debug_assert!(formula.is_satisfied_by(&bits));
            out.solutions.push(bits);
            out.free_counts.push(free);
            if out.solutions.len() >= cfg.max_num {
                break;
            }
        } else {
            out.stats.conflicts += 1;
        }
        let level = get_level(
            out.solutions.len(),
            cfg.max_num,
            state.trail(),
            cfg.tv,
            strategies.rb,
            &mut level_rng,
        );
        if level > 0 {
            out.stats.jumps += 1;
            log::trace!("jump from depth {} to level {level}", state.trail().depth());
        }
        if !state.recover_to_level(level) {
            out.exhausted = true;
            break;
        }
    }
    Ok(out)
}

fn complete_solution(
    state: &SearchState<'_>,
    delta: &WeightVector,
    rfiv: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<bool>, u32) {
    let mut free = 0;
    let bits = state
        .assignment()
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(b) => *b,
            None => {
                free += 1;
                if rfiv {
                    rng.random::<bool>()
                } else {
                    delta.as_slice()[i] >= 0.5
                }
            }
        })
        .collect();
    (bits, free)
}
