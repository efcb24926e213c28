//! CNF data model, DIMACS I/O, clause evaluation and unit propagation.
//!
//! Variables are 1-indexed everywhere, matching DIMACS. Clause state is kept
//! as plain literal lists plus per-clause counters of satisfied and unassigned
//! literals; [`Propagator`] maintains those counters incrementally and can undo
//! assignments in reverse order, which is what the samplers build on.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CnfError {
    #[error("missing or malformed header: {0}")]
    Header(String),
    #[error("line {line}: invalid literal `{token}`")]
    BadToken { line: usize, token: String },
    #[error("line {line}: literal {lit} out of range for {n} variables")]
    OutOfRange { line: usize, lit: i64, n: usize },
    #[error("assignment has {got} entries, formula has {expected} variables")]
    LengthMismatch { expected: usize, got: usize },
}

/// A variable or its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    var: u32,
    positive: bool,
}

impl Literal {
    /// Panics if `var` is 0.
    pub fn new(var: u32, positive: bool) -> Self {
        assert!(var >= 1, "variable indices start at 1");
        Literal { var, positive }
    }

    pub fn pos(var: u32) -> Self {
        Self::new(var, true)
    }

    pub fn neg(var: u32) -> Self {
        Self::new(var, false)
    }

    /// Signed DIMACS form; `None` for 0.
    pub fn from_dimacs(value: i64) -> Option<Self> {
        if value == 0 || value.unsigned_abs() > u32::MAX as u64 {
            return None;
        }
        Some(Literal::new(value.unsigned_abs() as u32, value > 0))
    }

    pub fn to_dimacs(self) -> i64 {
        if self.positive {
            self.var as i64
        } else {
            -(self.var as i64)
        }
    }

    pub fn var(self) -> u32 {
        self.var
    }

    /// Zero-based index of the variable.
    pub fn index(self) -> usize {
        self.var as usize - 1
    }

    pub fn is_positive(self) -> bool {
        self.positive
    }

    pub fn negate(self) -> Self {
        Literal {
            var: self.var,
            positive: !self.positive,
        }
    }

    /// Truth value of the literal under a variable value.
    pub fn eval(self, value: bool) -> bool {
        value == self.positive
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Clause {
    literals: Vec<Literal>,
}

impl Clause {
    /// Normalizes a literal list: repeated literals are collapsed (first
    /// occurrence wins) and a clause holding both `x` and `¬x` is a tautology,
    /// reported as `None`.
    pub fn new(literals: impl IntoIterator<Item = Literal>) -> Option<Self> {
        let mut out: Vec<Literal> = Vec::new();
        for lit in literals {
            if out.contains(&lit.negate()) {
                return None;
            }
            if !out.contains(&lit) {
                out.push(lit);
            }
        }
        Some(Clause { literals: out })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Clause>,
}

impl CnfFormula {
    /// Panics if any literal refers to a variable above `num_vars`.
    pub fn new(num_vars: usize, clauses: Vec<Clause>) -> Self {
        for clause in &clauses {
            for lit in clause.literals() {
                assert!(
                    lit.var() as usize <= num_vars,
                    "literal {lit} exceeds {num_vars} variables"
                );
            }
        }
        CnfFormula { num_vars, clauses }
    }

    /// Builds a formula from signed DIMACS-style clauses, normalizing each one
    /// and dropping tautologies.
    pub fn from_dimacs_clauses(num_vars: usize, clauses: &[Vec<i64>]) -> Self {
        let clauses = clauses
            .iter()
            .filter_map(|c| {
                Clause::new(
                    c.iter()
                        .map(|&l| Literal::from_dimacs(l).expect("literal 0 in clause")),
                )
            })
            .collect();
        Self::new(num_vars, clauses)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    /// True iff every clause has a literal made true by `values`.
    pub fn is_satisfied_by(&self, values: &[bool]) -> bool {
        debug_assert_eq!(values.len(), self.num_vars);
        self.clauses
            .iter()
            .all(|c| c.literals().iter().any(|l| l.eval(values[l.index()])))
    }
}

/// Partial truth assignment; `None` marks an unassigned variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    values: Vec<Option<bool>>,
}

impl Assignment {
    pub fn unassigned(n: usize) -> Self {
        Assignment {
            values: vec![None; n],
        }
    }

    pub fn from_values(values: Vec<Option<bool>>) -> Self {
        Assignment { values }
    }

    pub fn complete(values: &[bool]) -> Self {
        Assignment {
            values: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of the 1-indexed variable.
    pub fn get(&self, var: u32) -> Option<bool> {
        self.values[var as usize - 1]
    }

    pub fn set(&mut self, var: u32, value: Option<bool>) {
        self.values[var as usize - 1] = value;
    }

    pub fn values(&self) -> &[Option<bool>] {
        &self.values
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// The full 0/1 vector, if every variable is assigned.
    pub fn to_bits(&self) -> Option<Vec<bool>> {
        self.values.iter().copied().collect()
    }

    pub fn literal_value(&self, lit: Literal) -> Option<bool> {
        self.get(lit.var()).map(|v| lit.eval(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    Satisfied,
    Falsified,
    Undetermined,
}

pub fn evaluate(formula: &CnfFormula, assignment: &Assignment) -> Result<Evaluation, CnfError> {
    check_len(formula, assignment)?;
    let mut open = false;
    for clause in formula.clauses() {
        let mut has_unassigned = false;
        let mut satisfied = false;
        for &lit in clause.literals() {
            match assignment.literal_value(lit) {
                Some(true) => {
                    satisfied = true;
                    break;
                }
                Some(false) => {}
                None => has_unassigned = true,
            }
        }
        if satisfied {
            continue;
        }
        if !has_unassigned {
            return Ok(Evaluation::Falsified);
        }
        open = true;
    }
    Ok(if open {
        Evaluation::Undetermined
    } else {
        Evaluation::Satisfied
    })
}

fn check_len(formula: &CnfFormula, assignment: &Assignment) -> Result<(), CnfError> {
    if assignment.len() != formula.num_vars() {
        return Err(CnfError::LengthMismatch {
            expected: formula.num_vars(),
            got: assignment.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PropagationResult {
    /// Forced assignments in derivation order.
    pub implied: Vec<(u32, bool)>,
    pub conflict: bool,
}

/// Runs unit propagation from `assignment` to a fixed point.
pub fn unit_propagate(
    formula: &CnfFormula,
    assignment: &Assignment,
) -> Result<PropagationResult, CnfError> {
    check_len(formula, assignment)?;
    let mut engine = Propagator::new(formula);
    for (i, value) in assignment.values().iter().enumerate() {
        if let Some(v) = *value {
            let lit = Literal::new(i as u32 + 1, v);
            if engine.value(lit.var()).is_none() {
                engine.assign(lit);
            }
        }
    }
    if engine.in_conflict() {
        return Ok(PropagationResult {
            implied: Vec::new(),
            conflict: true,
        });
    }
    let start = engine.trail().len();
    let conflict = !engine.propagate();
    let implied = engine.trail()[start..]
        .iter()
        .map(|l| (l.var(), l.is_positive()))
        .collect();
    Ok(PropagationResult { implied, conflict })
}

/// Incremental clause-state tracker with an undo trail.
///
/// Every assignment updates the satisfied/unassigned counters of the clauses
/// the variable occurs in. Clauses that become unit enqueue their remaining
/// literal; [`Propagator::propagate`] drains that queue.
#[derive(Debug, Clone)]
pub struct Propagator<'f> {
    formula: &'f CnfFormula,
    /// `occurs[v][1]` lists clauses containing `+v`, `occurs[v][0]` those with `-v`.
    occurs: Vec<[Vec<u32>; 2]>,
    values: Vec<Option<bool>>,
    sat_count: Vec<u32>,
    unassigned_count: Vec<u32>,
    satisfied_clauses: usize,
    trail: Vec<Literal>,
    pending: VecDeque<Literal>,
    conflict: bool,
    has_empty_clause: bool,
}

impl<'f> Propagator<'f> {
    pub fn new(formula: &'f CnfFormula) -> Self {
        let n = formula.num_vars();
        let mut occurs: Vec<[Vec<u32>; 2]> = vec![[Vec::new(), Vec::new()]; n];
        let mut unassigned_count = Vec::with_capacity(formula.num_clauses());
        let mut pending = VecDeque::new();
        let mut conflict = false;
        for (ci, clause) in formula.clauses().iter().enumerate() {
            for lit in clause.literals() {
                occurs[lit.index()][lit.is_positive() as usize].push(ci as u32);
            }
            unassigned_count.push(clause.len() as u32);
            match clause.literals() {
                [] => conflict = true,
                [unit] => pending.push_back(*unit),
                _ => {}
            }
        }
        Propagator {
            formula,
            occurs,
            values: vec![None; n],
            sat_count: vec![0; formula.num_clauses()],
            unassigned_count,
            satisfied_clauses: 0,
            trail: Vec::new(),
            pending,
            conflict,
            has_empty_clause: conflict,
        }
    }

    pub fn formula(&self) -> &'f CnfFormula {
        self.formula
    }

    pub fn value(&self, var: u32) -> Option<bool> {
        self.values[var as usize - 1]
    }

    pub fn values(&self) -> &[Option<bool>] {
        &self.values
    }

    pub fn trail(&self) -> &[Literal] {
        &self.trail
    }

    pub fn in_conflict(&self) -> bool {
        self.conflict
    }

    /// All clauses have a true literal.
    pub fn all_satisfied(&self) -> bool {
        self.satisfied_clauses == self.formula.num_clauses()
    }

    /// Per-clause `(satisfied literals, unassigned literals)` counters.
    pub fn clause_counters(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.sat_count
            .iter()
            .copied()
            .zip(self.unassigned_count.iter().copied())
    }

    /// Makes `lit` true. The variable must be unassigned.
    pub fn assign(&mut self, lit: Literal) {
        let idx = lit.index();
        debug_assert!(self.values[idx].is_none(), "x{} already assigned", lit.var());
        self.values[idx] = Some(lit.is_positive());
        self.trail.push(lit);
        let pol = lit.is_positive() as usize;
        for &ci in &self.occurs[idx][pol] {
            let ci = ci as usize;
            self.sat_count[ci] += 1;
            self.unassigned_count[ci] -= 1;
            if self.sat_count[ci] == 1 {
                self.satisfied_clauses += 1;
            }
        }
        for &ci in &self.occurs[idx][1 - pol] {
            let ci = ci as usize;
            self.unassigned_count[ci] -= 1;
            if self.sat_count[ci] > 0 {
                continue;
            }
            match self.unassigned_count[ci] {
                0 => self.conflict = true,
                1 => {
                    let values = &self.values;
                    if let Some(&unit) = self.formula.clauses()[ci]
                        .literals()
                        .iter()
                        .find(|l| values[l.index()].is_none())
                    {
                        self.pending.push_back(unit);
                    }
                }
                _ => {}
            }
        }
    }

    /// Drains the unit queue. Returns `false` on conflict.
    pub fn propagate(&mut self) -> bool {
        while !self.conflict {
            let Some(lit) = self.pending.pop_front() else {
                break;
            };
            match self.value(lit.var()) {
                Some(v) if lit.eval(v) => {}
                Some(_) => self.conflict = true,
                None => self.assign(lit),
            }
        }
        if self.conflict {
            self.pending.clear();
        }
        !self.conflict
    }

    /// Undoes trail entries until only `len` remain; clears pending units and
    /// the conflict flag.
    pub fn backtrack_to(&mut self, len: usize) {
        while self.trail.len() > len {
            let lit = self.trail.pop().expect("trail longer than target");
            self.unassign(lit);
        }
        self.pending.clear();
        self.conflict = self.has_empty_clause;
        if len == 0 {
            self.requeue_units();
        }
    }

    fn unassign(&mut self, lit: Literal) {
        let idx = lit.index();
        self.values[idx] = None;
        let pol = lit.is_positive() as usize;
        for &ci in &self.occurs[idx][pol] {
            let ci = ci as usize;
            self.sat_count[ci] -= 1;
            self.unassigned_count[ci] += 1;
            if self.sat_count[ci] == 0 {
                self.satisfied_clauses -= 1;
            }
        }
        for &ci in &self.occurs[idx][1 - pol] {
            self.unassigned_count[ci as usize] += 1;
        }
    }

    // Root-level units are queued at construction only.
    fn requeue_units(&mut self) {
        for clause in self.formula.clauses() {
            if let [unit] = clause.literals() {
                self.pending.push_back(*unit);
            }
        }
    }
}

pub fn parse_dimacs(text: &str) -> Result<CnfFormula, CnfError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut raw_count = 0usize;
    let mut current: Vec<Literal> = Vec::new();
    let mut dropped = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') || trimmed.starts_with('%') {
            continue;
        }
        if trimmed.starts_with('p') {
            if header.is_some() {
                return Err(CnfError::Header(format!("duplicate header on line {lineno}")));
            }
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(CnfError::Header(trimmed.to_string()));
            }
            let n = parts[2]
                .parse()
                .map_err(|_| CnfError::Header(trimmed.to_string()))?;
            let m = parts[3]
                .parse()
                .map_err(|_| CnfError::Header(trimmed.to_string()))?;
            header = Some((n, m));
            continue;
        }
        let Some((n, _)) = header else {
            return Err(CnfError::Header("clause before `p cnf` line".into()));
        };
        for token in trimmed.split_whitespace() {
            let value: i64 = token.parse().map_err(|_| CnfError::BadToken {
                line: lineno,
                token: token.to_string(),
            })?;
            if value == 0 {
                raw_count += 1;
                match Clause::new(current.drain(..)) {
                    Some(c) => clauses.push(c),
                    None => dropped += 1,
                }
                continue;
            }
            if value.unsigned_abs() as usize > n {
                return Err(CnfError::OutOfRange {
                    line: lineno,
                    lit: value,
                    n,
                });
            }
            current.push(Literal::from_dimacs(value).expect("nonzero literal"));
        }
    }
    let Some((n, m)) = header else {
        return Err(CnfError::Header("missing `p cnf` line".into()));
    };
    if !current.is_empty() {
        log::warn!("last clause is missing its 0 terminator; accepting it");
        raw_count += 1;
        match Clause::new(current.drain(..)) {
            Some(c) => clauses.push(c),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} tautological clause(s)");
    }
    if raw_count != m {
        log::warn!("header declares {m} clauses, found {raw_count}");
    }
    Ok(CnfFormula::new(n, clauses))
}

pub fn write_dimacs(formula: &CnfFormula) -> String {
    use std::fmt::Write;
    let mut out = format!("p cnf {} {}\n", formula.num_vars(), formula.num_clauses());
    for clause in formula.clauses() {
        for lit in clause.literals() {
            write!(out, "{} ", lit.to_dimacs()).unwrap();
        }
        out.push_str("0\n");
    }
    out
}
