//! The sampler/optimiser loop, the ablation matrix and report writing.
//!
//! One run alternates sampling rounds and BO updates:
//!
//! 1. sample with uniform weights, score the samples, start a trust region;
//! 2. while the region is large enough: suggest weights, sample, score,
//!    update the region;
//! 3. when the region collapses, start over from step 1.
//!
//! Every score counts against an evaluation budget of
//! `samples_per_round · max_iter`, and no run has more than `max_iter` rounds.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{random_sample, walksat_sample, BaselineError, RandomConfig, WalkSatConfig};
use crate::bo::{bits_to_point, init_ci, suggest_prefer, tr_sufficient, update_ci, BoConfig, BoError, BoState, GpConfig};
use crate::cnf::{parse_dimacs, CnfError, CnfFormula};
use crate::dpll::{sample_solutions, SampleSet, SamplerConfig, SamplerError, Strategies, WeightVector};
use crate::rules::{
    coverage_on_log, decode_bits, encode_rules, invert_attack_rule, EncodeOptions, RuleError, RuleSet,
    Transaction, VarMap,
};
use crate::scenario::{
    coverage_of_bits, gen_instance, theta, upper_bound, CoverageModel, InstanceSpec, InstanceSummary,
    ScenarioError, ScenarioSpec,
};
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("instance is unsatisfiable")]
    Unsat,
    #[error("scenario has {expected} components but the formula has {got} variables")]
    LengthMismatch { expected: usize, got: usize },
    #[error("a transaction-log scenario needs a rule instance")]
    LogNeedsRules,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Cnf(#[from] CnfError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Dpll,
    Walksat,
    Random,
}

impl FromStr for SolverKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dpll" | "adaptive-dpll" => Ok(SolverKind::Dpll),
            "walksat" => Ok(SolverKind::Walksat),
            "random" => Ok(SolverKind::Random),
            _ => Err(HarnessError::Config(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub rb: bool,
    pub rfdv: bool,
    pub rfiv: bool,
    pub bo: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        rb: true,
        rfdv: true,
        rfiv: true,
        bo: true,
    };

    pub fn strategies(self) -> Strategies {
        Strategies {
            rb: self.rb,
            rfdv: self.rfdv,
            rfiv: self.rfiv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_iter: usize,
    pub samples_per_round: usize,
    pub time_per_round: Duration,
    pub total_budget: Duration,
    pub solver: SolverKind,
    pub ablation: Ablation,
    pub seed: u64,
    pub tv: usize,
    /// Restart cap per WalkSAT round, for reproducible runs.
    pub walksat_max_tries: Option<usize>,
    /// Draw cap for the random solver, for reproducible runs.
    pub random_max_draws: Option<u64>,
    pub gp: GpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_iter: 15,
            samples_per_round: 30,
            time_per_round: Duration::from_secs(10),
            total_budget: Duration::from_secs(150),
            solver: SolverKind::Dpll,
            ablation: Ablation::FULL,
            seed: 0,
            tv: 200,
            walksat_max_tries: None,
            random_max_draws: None,
            gp: GpConfig::default(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.max_iter == 0 || self.samples_per_round == 0 {
            return Err(HarnessError::Config("max_iter and samples must be at least 1".into()));
        }
        if self.time_per_round.is_zero() || self.total_budget.is_zero() {
            return Err(HarnessError::Config("time budgets must be positive".into()));
        }
        Ok(())
    }

    pub fn evaluation_budget(&self) -> usize {
        self.samples_per_round * self.max_iter
    }
}

/// All scored solutions of a run.
#[derive(Debug, Clone, Default)]
pub struct ElitePool {
    entries: Vec<(Vec<bool>, f64)>,
    best: Option<usize>,
}

impl ElitePool {
    pub fn insert(&mut self, bits: Vec<bool>, value: f64) {
        self.entries.push((bits, value));
        let i = self.entries.len() - 1;
        if self.best.is_none_or(|b| value > self.entries[b].1) {
            self.best = Some(i);
        }
    }

    pub fn best(&self) -> Option<(&[bool], f64)> {
        self.best.map(|i| (self.entries[i].0.as_slice(), self.entries[i].1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distinct(&self) -> usize {
        self.entries.iter().map(|e| &e.0).collect::<HashSet<_>>().len()
    }
}

/// Caps how many solutions a run may score.
#[derive(Debug, Clone, Copy)]
struct EvalMeter {
    cap: usize,
    used: usize,
}

impl EvalMeter {
    fn remaining(&self) -> usize {
        self.cap - self.used
    }

    fn take(&mut self, wanted: usize) -> usize {
        let k = wanted.min(self.remaining());
        self.used += k;
        k
    }
}

/// How solutions are scored.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Model(&'a CoverageModel),
    /// Coverage of the decoded attack rule on a transaction log.
    Log {
        varmap: &'a VarMap,
        log: &'a [Transaction],
    },
}

impl Objective<'_> {
    fn evaluate(&self, bits: &[bool]) -> Result<f64, HarnessError> {
        match self {
            Objective::Model(m) => Ok(coverage_of_bits(m, bits)?),
            Objective::Log { varmap, log } => Ok(coverage_on_log(&decode_bits(bits, varmap)?, log)?),
        }
    }

    fn upper_bound(&self) -> f64 {
        match self {
            Objective::Model(m) => upper_bound(m),
            Objective::Log { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub formula: &'a CnfFormula,
    /// Present for rule instances; used to report the best attack rule.
    pub varmap: Option<&'a VarMap>,
    pub objective: Objective<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    Bo,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub restart: usize,
    pub phase: Phase,
    pub delta: Vec<f64>,
    pub samples: usize,
    pub distinct: usize,
    pub evaluated: usize,
    pub round_best: Option<f64>,
    pub round_mean: Option<f64>,
    pub best_so_far: Option<f64>,
    /// Trust-region side after this round.
    pub tr_length: Option<f64>,
    pub exhausted: bool,
    pub timed_out: bool,
    #[serde(skip)]
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: SolverKind,
    pub ablation: Ablation,
    pub seed: u64,
    pub num_vars: usize,
    pub num_clauses: usize,
    pub rounds: Vec<RoundTrace>,
    pub restarts: usize,
    pub evaluations: usize,
    pub distinct_solutions: usize,
    pub best_value: Option<f64>,
    /// Best solution as a 0/1 string, variable 1 first.
    pub best_solution: Option<String>,
    pub upper_bound: f64,
    pub attack_rule: Option<String>,
    pub verification_rule: Option<String>,
    /// Synthetic transactions derived from the log by the best attack rule,
    /// and how many of them differ from every logged transaction.
    pub synthetic_total: Option<usize>,
    pub synthetic_novel: Option<usize>,
    #[serde(skip)]
    pub wall: Duration,
}

impl RunReport {
    pub fn best_bits(&self) -> Option<Vec<bool>> {
        self.best_solution
            .as_ref()
            .map(|s| s.bytes().map(|b| b == b'1').collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

const BO_SEED_TAG: u64 = 0xB0;
const ROUND_SEED_TAG: u64 = 0x5A;

struct Runner<'a, 'p> {
    problem: &'a Problem<'p>,
    cfg: &'a RunConfig,
    pool: ElitePool,
    meter: EvalMeter,
    rounds: Vec<RoundTrace>,
    started: Instant,
}

impl Runner<'_, '_> {
    fn time_left(&self) -> Duration {
        self.cfg.total_budget.saturating_sub(self.started.elapsed())
    }

    fn sample(&self, delta: &WeightVector, round: usize) -> Result<SampleSet, HarnessError> {
        let seed = derive_seed(self.cfg.seed, &[ROUND_SEED_TAG, round as u64]);
        let budget = self.cfg.time_per_round.min(self.time_left());
        let set = match self.cfg.solver {
            SolverKind::Dpll => sample_solutions(
                self.problem.formula,
                delta,
                &SamplerConfig {
                    max_num: self.cfg.samples_per_round,
                    tv: self.cfg.tv,
                    time_budget: Some(budget),
                    seed,
                    strategies: self.cfg.ablation.strategies(),
                },
            )?,
            SolverKind::Walksat => walksat_sample(
                self.problem.formula,
                delta,
                &WalkSatConfig {
                    seed,
                    max_num: self.cfg.samples_per_round,
                    max_tries: self.cfg.walksat_max_tries,
                    time_budget: Some(budget),
                    ..WalkSatConfig::default()
                },
            )?,
            SolverKind::Random => unreachable!("random runs take a single pass"),
        };
        Ok(set)
    }

    /// Scores the metered prefix of a sample set and records the round.
    fn score(
        &mut self,
        set: &SampleSet,
        phase: Phase,
        restart: usize,
        delta: Vec<f64>,
        wall: Duration,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>), HarnessError> {
        let k = self.meter.take(set.len());
        let mut points = Vec::with_capacity(k);
        let mut values = Vec::with_capacity(k);
        for bits in &set.solutions[..k] {
            debug_assert!(self.problem.formula.is_satisfied_by(bits));
            let v = self.problem.objective.evaluate(bits)?;
            self.pool.insert(bits.clone(), v);
            points.push(bits_to_point(bits));
            values.push(v);
        }
        let round_best = values.iter().copied().reduce(f64::max);
        self.rounds.push(RoundTrace {
            round: self.rounds.len(),
            restart,
            phase,
            delta,
            samples: set.len(),
            distinct: set.distinct_count(),
            evaluated: k,
            round_best,
            round_mean: (k > 0).then(|| values.iter().sum::<f64>() / k as f64),
            best_so_far: self.pool.best().map(|b| b.1),
            tr_length: None,
            exhausted: set.exhausted,
            timed_out: set.timed_out,
            wall,
        });
        log::debug!(
            "round {} ({phase:?}): {} samples, best {:?}, {:?}",
            self.rounds.len() - 1,
            set.len(),
            round_best,
            wall
        );
        Ok((points, values))
    }

    fn can_continue(&self) -> bool {
        self.rounds.len() < self.cfg.max_iter && self.meter.remaining() > 0 && !self.time_left().is_zero()
    }

    fn run_random(&mut self) -> Result<(), HarnessError> {
        let t = Instant::now();
        let set = random_sample(
            self.problem.formula,
            &RandomConfig {
                time_budget: Some(self.cfg.total_budget),
                max_num: Some(self.meter.cap),
                max_draws: self.cfg.random_max_draws,
                seed: derive_seed(self.cfg.seed, &[ROUND_SEED_TAG, 0]),
            },
        )?;
        let n = self.problem.formula.num_vars();
        self.score(&set, Phase::Random, 0, vec![0.5; n], t.elapsed())?;
        Ok(())
    }

    fn run_loop(&mut self) -> Result<usize, HarnessError> {
        let n = self.problem.formula.num_vars();
        let mut restart = 0;
        while self.can_continue() {
            let uniform = WeightVector::uniform(n);
            let t = Instant::now();
            let set = self.sample(&uniform, self.rounds.len())?;
            if set.is_empty() && set.exhausted {
                return Err(HarnessError::Unsat);
            }
            let (points, values) = self.score(&set, Phase::Init, restart, uniform.as_slice().to_vec(), t.elapsed())?;
            let mut state: Option<BoState> = None;
            if self.cfg.ablation.bo && !points.is_empty() {
                let bo_cfg = BoConfig {
                    gp: self.cfg.gp,
                    seed: derive_seed(self.cfg.seed, &[BO_SEED_TAG, restart as u64]),
                    ..BoConfig::default()
                };
                let s = init_ci(&points, &values, bo_cfg)?;
                self.rounds.last_mut().expect("round recorded").tr_length = Some(s.length);
                state = Some(s);
            }
            while self.can_continue() && state.as_ref().is_none_or(tr_sufficient) {
                let delta = match state.as_mut() {
                    Some(s) => suggest_prefer(s),
                    None => WeightVector::uniform(n),
                };
                let t = Instant::now();
                let set = self.sample(&delta, self.rounds.len())?;
                let (points, values) = self.score(&set, Phase::Bo, restart, delta.as_slice().to_vec(), t.elapsed())?;
                if let Some(s) = state.as_mut() {
                    if !points.is_empty() {
                        update_ci(s, &points, &values)?;
                    }
                    self.rounds.last_mut().expect("round recorded").tr_length = Some(s.length);
                }
                if state.is_none() && points.is_empty() {
                    break;
                }
            }
            if state.is_none() && !self.can_continue() {
                break;
            }
            restart += 1;
        }
        Ok(restart.saturating_sub(1))
    }
}

/// Runs the sampler/optimiser loop on one problem.
pub fn run_satbo(problem: &Problem<'_>, cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    if let Objective::Model(m) = problem.objective {
        if m.components.len() != problem.formula.num_vars() {
            return Err(HarnessError::LengthMismatch {
                expected: m.components.len(),
                got: problem.formula.num_vars(),
            });
        }
    }
    let mut runner = Runner {
        problem,
        cfg,
        pool: ElitePool::default(),
        meter: EvalMeter {
            cap: cfg.evaluation_budget(),
            used: 0,
        },
        rounds: Vec::new(),
        started: Instant::now(),
    };
    let restarts = match cfg.solver {
        SolverKind::Random => {
            runner.run_random()?;
            0
        }
        _ => runner.run_loop()?,
    };
    let wall = runner.started.elapsed();

    let best = runner.pool.best().map(|(b, v)| (b.to_vec(), v));
    let mut report = RunReport {
        solver: cfg.solver,
        ablation: cfg.ablation,
        seed: cfg.seed,
        num_vars: problem.formula.num_vars(),
        num_clauses: problem.formula.num_clauses(),
        rounds: runner.rounds,
        restarts,
        evaluations: runner.meter.used,
        distinct_solutions: runner.pool.distinct(),
        best_value: best.as_ref().map(|b| b.1),
        best_solution: best.as_ref().map(|b| bit_string(&b.0)),
        upper_bound: problem.objective.upper_bound(),
        attack_rule: None,
        verification_rule: None,
        synthetic_total: None,
        synthetic_novel: None,
        wall,
    };
    if let (Some((bits, _)), Some(vm)) = (&best, problem.varmap) {
        if let Ok(attack) = decode_bits(bits, vm) {
            report.verification_rule = Some(invert_attack_rule(&attack, "V1").to_string());
            report.attack_rule = Some(attack.to_string());
            if let Objective::Log { log, .. } = problem.objective {
                let mut total = 0;
                let mut novel = 0;
                for t in log {
                    if let Some(synth) = attack.apply(t)? {
                        total += 1;
                        if !log.contains(&synth) {
                            novel += 1;
                        }
                    }
                }
                report.synthetic_total = Some(total);
                report.synthetic_novel = Some(novel);
            }
        }
    }
    log::info!(
        "run seed {} {:?}: best {:?} after {} evaluations in {:?}",
        cfg.seed,
        cfg.solver,
        report.best_value,
        report.evaluations,
        wall
    );
    Ok(report)
}

/// The eight configurations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Random,
    SatBo0,
    SatBo1,
    SatBo2,
    SatBo3,
    SatBo4,
    WalkSatBo,
    SatBo,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Random,
        Variant::SatBo0,
        Variant::SatBo1,
        Variant::SatBo2,
        Variant::SatBo3,
        Variant::SatBo4,
        Variant::WalkSatBo,
        Variant::SatBo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Random => "Random",
            Variant::SatBo0 => "SAT-BO0",
            Variant::SatBo1 => "SAT-BO1",
            Variant::SatBo2 => "SAT-BO2",
            Variant::SatBo3 => "SAT-BO3",
            Variant::SatBo4 => "SAT-BO4",
            Variant::WalkSatBo => "WalkSAT-BO",
            Variant::SatBo => "SAT-BO",
        }
    }

    pub fn solver(self) -> SolverKind {
        match self {
            Variant::Random => SolverKind::Random,
            Variant::WalkSatBo => SolverKind::Walksat,
            _ => SolverKind::Dpll,
        }
    }

    pub fn ablation(self) -> Ablation {
        let off = Ablation {
            rb: false,
            rfdv: false,
            rfiv: false,
            bo: false,
        };
        match self {
            Variant::Random => off,
            Variant::SatBo0 | Variant::WalkSatBo => Ablation { bo: true, ..off },
            Variant::SatBo1 => Ablation {
                rb: false,
                ..Ablation::FULL
            },
            Variant::SatBo2 => Ablation {
                rfdv: false,
                ..Ablation::FULL
            },
            Variant::SatBo3 => Ablation {
                rfiv: false,
                ..Ablation::FULL
            },
            Variant::SatBo4 => Ablation {
                bo: false,
                ..Ablation::FULL
            },
            Variant::SatBo => Ablation::FULL,
        }
    }

    pub fn configure(self, base: &RunConfig) -> RunConfig {
        RunConfig {
            solver: self.solver(),
            ablation: self.ablation(),
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::Config(format!("unknown variant `{s}`")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A benchmark instance: a CNF, plus its rule set when it came from rules.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub formula: CnfFormula,
    pub rules: Option<(RuleSet, VarMap)>,
}

impl Instance {
    pub fn from_rules(name: impl Into<String>, rules: RuleSet, tamper_field: Option<&str>, opts: EncodeOptions) -> Result<Self, HarnessError> {
        let field = tamper_field
            .map(str::to_string)
            .or_else(|| rules.tamper.clone())
            .ok_or(RuleError::NoTamperField)?;
        let (formula, vm) = encode_rules(&rules, &field, opts)?;
        Ok(Instance {
            name: name.into(),
            formula,
            rules: Some((rules, vm)),
        })
    }

    /// Reads a DIMACS file or a rule file; the former is recognised by its
    /// `p cnf` header.
    pub fn load(path: &Path, tamper_field: Option<&str>, opts: EncodeOptions) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "instance".into());
        if text.lines().any(|l| l.trim_start().starts_with("p cnf")) {
            return Ok(Instance {
                name,
                formula: parse_dimacs(&text)?,
                rules: None,
            });
        }
        Instance::from_rules(name, RuleSet::parse(&text)?, tamper_field, opts)
    }

    pub fn generate(vars: usize, rules: Option<usize>, seed: u64) -> Result<Self, HarnessError> {
        let g = gen_instance(&InstanceSpec { vars, rules }, seed)?;
        Ok(Instance {
            name: format!("v{}-c{}-s{seed}", g.formula.num_vars(), g.formula.num_clauses()),
            formula: g.formula,
            rules: Some((g.rules, g.varmap)),
        })
    }

    pub fn varmap(&self) -> Option<&VarMap> {
        self.rules.as_ref().map(|r| &r.1)
    }
}

/// A scenario bound to an instance.
#[derive(Debug, Clone)]
pub enum BoundScenario {
    Model(CoverageModel),
    Log(Vec<Transaction>),
}

impl BoundScenario {
    pub fn bind(spec: &ScenarioSpec, instance: &Instance, seed: u64, base_dir: &Path) -> Result<Self, HarnessError> {
        match spec {
            ScenarioSpec::Log { path } => {
                let (rules, _) = instance.rules.as_ref().ok_or(HarnessError::LogNeedsRules)?;
                let p = base_dir.join(path);
                let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                Ok(BoundScenario::Log(rules.parse_transactions(&text)?))
            }
            _ => Ok(BoundScenario::Model(
                spec.model(instance.formula.num_vars(), seed)?
                    .expect("synthetic scenarios have a model"),
            )),
        }
    }

    pub fn problem<'a>(&'a self, instance: &'a Instance) -> Result<Problem<'a>, HarnessError> {
        let objective = match self {
            BoundScenario::Model(m) => Objective::Model(m),
            BoundScenario::Log(log) => Objective::Log {
                varmap: instance.varmap().ok_or(HarnessError::LogNeedsRules)?,
                log,
            },
        };
        Ok(Problem {
            formula: &instance.formula,
            varmap: instance.varmap(),
            objective,
        })
    }
}

/// One cell of the ablation matrix.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub instance: String,
    pub scenario: String,
    pub variant: Variant,
    pub repeat: usize,
    pub report: RunReport,
}

impl RunRecord {
    pub fn s_star(&self) -> f64 {
        self.report.best_value.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub instances: Vec<Instance>,
    pub scenarios: Vec<ScenarioSpec>,
    pub variants: Vec<Variant>,
    pub repeats: usize,
    pub seed: u64,
    pub base: RunConfig,
    /// Directory that relative log paths are resolved against.
    pub base_dir: PathBuf,
}

/// Percentage rounded half-to-even at two decimals.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round_ties_even() / 100.0
}

fn scenario_label(spec: &ScenarioSpec) -> String {
    match spec {
        ScenarioSpec::Binomial { p } => format!("binomial-{p}"),
        ScenarioSpec::PowerLaw => "power-law".into(),
        ScenarioSpec::Log { path } => {
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            format!("log-{stem}")
        }
    }
}

/// Runs every (instance, scenario, variant, repeat) combination. All variants
/// share the scenario data and the per-repeat seed.
pub fn run_ablation(plan: &AblationPlan) -> Result<Vec<RunRecord>, HarnessError> {
    if plan.instances.is_empty() || plan.scenarios.is_empty() {
        return Err(HarnessError::Config("need at least one instance and one scenario".into()));
    }
    if plan.repeats == 0 || plan.variants.is_empty() {
        return Err(HarnessError::Config("need at least one repeat and one variant".into()));
    }
    let mut bound = Vec::new();
    for (ii, inst) in plan.instances.iter().enumerate() {
        for (si, spec) in plan.scenarios.iter().enumerate() {
            let seed = derive_seed(plan.seed, &[ii as u64, si as u64]);
            bound.push((ii, si, BoundScenario::bind(spec, inst, seed, &plan.base_dir)?));
        }
    }
    let mut jobs = Vec::new();
    for (bi, (ii, si, _)) in bound.iter().enumerate() {
        for repeat in 0..plan.repeats {
            let seed = derive_seed(plan.seed, &[*ii as u64, *si as u64, repeat as u64, 1]);
            for &variant in &plan.variants {
                jobs.push((bi, repeat, seed, variant));
            }
        }
    }
    let results: Vec<Result<Option<RunRecord>, HarnessError>> = jobs
        .par_iter()
        .map(|&(bi, repeat, seed, variant)| {
            let (ii, si, scen) = &bound[bi];
            let inst = &plan.instances[*ii];
            let problem = scen.problem(inst)?;
            let cfg = RunConfig {
                seed,
                ..variant.configure(&plan.base)
            };
            match run_satbo(&problem, &cfg) {
                Ok(report) => Ok(Some(RunRecord {
                    instance: inst.name.clone(),
                    scenario: scenario_label(&plan.scenarios[*si]),
                    variant,
                    repeat,
                    report,
                })),
                Err(HarnessError::Unsat) => {
                    log::warn!("{}: unsatisfiable, run skipped", inst.name);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(rec) = r? {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Best and mean `s*` over repeats for one (instance, scenario, variant).
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub best: f64,
    pub avg: f64,
    pub upper: f64,
}

fn cell_stats(records: &[RunRecord], instance: &str, scenario: &str, variant: Variant) -> Option<CellStats> {
    let runs: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.instance == instance && r.scenario == scenario && r.variant == variant)
        .collect();
    if runs.is_empty() {
        return None;
    }
    let values: Vec<f64> = runs.iter().map(|r| r.s_star()).collect();
    Some(CellStats {
        best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        avg: values.iter().sum::<f64>() / values.len() as f64,
        upper: runs[0].report.upper_bound,
    })
}

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for s in items {
        if !seen.iter().any(|x| x == s) {
            seen.push(s.to_string());
        }
    }
    seen
}

/// Aggregate `Θ` for one variant and scenario, from best and from mean `s*`.
pub fn aggregate_theta(records: &[RunRecord], scenario: &str, variant: Variant) -> Option<(f64, f64)> {
    let instances = ordered_unique(records.iter().map(|r| r.instance.as_str()));
    let cells: Vec<CellStats> = instances
        .iter()
        .filter_map(|i| cell_stats(records, i, scenario, variant))
        .collect();
    let best: Vec<InstanceSummary> = cells
        .iter()
        .map(|c| InstanceSummary {
            s_star: c.best,
            upper: c.upper,
        })
        .collect();
    let avg: Vec<InstanceSummary> = cells
        .iter()
        .map(|c| InstanceSummary {
            s_star: c.avg,
            upper: c.upper,
        })
        .collect();
    Some((theta(&best).ok()?, theta(&avg).ok()?))
}

/// Writes `runs.csv`, one `table_<scenario>.csv` per scenario, `summary.csv`
/// and a JSON trace per run under `traces/`.
pub fn write_reports(records: &[RunRecord], out: &Path) -> Result<(), HarnessError> {
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let variants: Vec<Variant> = {
        let mut v: Vec<Variant> = records.iter().map(|r| r.variant).collect();
        v.sort();
        v.dedup();
        v
    };
    let instances = ordered_unique(records.iter().map(|r| r.instance.as_str()));
    let scenarios = ordered_unique(records.iter().map(|r| r.scenario.as_str()));

    let path = out.join("runs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "instance",
        "scenario",
        "variant",
        "repeat",
        "seed",
        "vars",
        "clauses",
        "rounds",
        "restarts",
        "evaluations",
        "distinct",
        "best",
        "upper",
        "coverage_pct",
    ])?;
    for r in records {
        let rep = &r.report;
        w.write_record([
            r.instance.clone(),
            r.scenario.clone(),
            r.variant.to_string(),
            r.repeat.to_string(),
            rep.seed.to_string(),
            rep.num_vars.to_string(),
            rep.num_clauses.to_string(),
            rep.rounds.len().to_string(),
            rep.restarts.to_string(),
            rep.evaluations.to_string(),
            rep.distinct_solutions.to_string(),
            format!("{}", r.s_star()),
            format!("{}", rep.upper_bound),
            format!("{:.2}", percent(r.s_star() / rep.upper_bound)),
        ])?;
        let file = traces.join(format!(
            "{}__{}__{}__r{}.json",
            r.instance, r.scenario, r.variant, r.repeat
        ));
        fs::write(&file, rep.to_json()).map_err(io_err(&file))?;
    }
    w.flush().map_err(io_err(&path))?;

    for scenario in &scenarios {
        let path = out.join(format!("table_{scenario}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["instance".to_string()];
        for v in &variants {
            header.push(format!("{v} f_best"));
            header.push(format!("{v} f_avg"));
        }
        w.write_record(&header)?;
        let mut wins = vec![0usize; variants.len()];
        for inst in &instances {
            let cells: Vec<Option<CellStats>> = variants
                .iter()
                .map(|&v| cell_stats(records, inst, scenario, v))
                .collect();
            if cells.iter().all(Option::is_none) {
                continue;
            }
            let pct: Vec<Option<(f64, f64)>> = cells
                .iter()
                .map(|c| c.as_ref().map(|c| (percent(c.best / c.upper), percent(c.avg / c.upper))))
                .collect();
            let top = pct.iter().flatten().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let mut row = vec![inst.clone()];
            for (k, p) in pct.iter().enumerate() {
                match p {
                    Some((b, a)) => {
                        if *b == top {
                            wins[k] += 1;
                        }
                        row.push(format!("{b:.2}"));
                        row.push(format!("{a:.2}"));
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            w.write_record(&row)?;
        }
        let mut row = vec!["#best".to_string()];
        for k in wins {
            row.push(k.to_string());
            row.push(String::new());
        }
        w.write_record(&row)?;
        w.flush().map_err(io_err(&path))?;
    }

    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = ["algorithm", "rb", "rfdv", "rfiv", "bo"].map(String::from).to_vec();
    for s in &scenarios {
        header.push(format!("{s} f_best"));
        header.push(format!("{s} f_avg"));
    }
    w.write_record(&header)?;
    let mark = |b: bool| if b { "x" } else { "" }.to_string();
    for &v in &variants {
        let a = v.ablation();
        let mut row = vec![v.to_string(), mark(a.rb), mark(a.rfdv), mark(a.rfiv), mark(a.bo)];
        for s in &scenarios {
            match aggregate_theta(records, s, v) {
                Some((b, avg)) => {
                    row.push(format!("{:.2}", percent(b)));
                    row.push(format!("{:.2}", percent(avg)));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

/// `satbo ablate` configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    pub out: PathBuf,
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub variants: Option<Vec<Variant>>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(rename = "instances")]
    pub instances: Vec<InstanceEntry>,
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub max_iter: Option<usize>,
    pub samples: Option<usize>,
    pub round_seconds: Option<f64>,
    pub budget_seconds: Option<f64>,
    pub tv: Option<usize>,
    pub walksat_max_tries: Option<usize>,
    pub random_max_draws: Option<u64>,
    pub adam_iters: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceEntry {
    pub path: Option<PathBuf>,
    pub tamper_field: Option<String>,
    #[serde(default)]
    pub consistent_thresholds: bool,
    pub generate: Option<GenerateEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateEntry {
    pub vars: usize,
    pub seed: u64,
    pub rules: Option<usize>,
}

fn seconds(v: f64, what: &str) -> Result<Duration, HarnessError> {
    Duration::try_from_secs_f64(v).map_err(|_| HarnessError::Config(format!("invalid {what}: {v}")))
}

impl AblationFile {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    /// Resolves paths against `base_dir`, loads instances and builds a plan.
    pub fn plan(&self, base_dir: &Path) -> Result<AblationPlan, HarnessError> {
        let mut base = RunConfig::default();
        let r = &self.run;
        if let Some(v) = r.max_iter {
            base.max_iter = v;
        }
        if let Some(v) = r.samples {
            base.samples_per_round = v;
        }
        if let Some(v) = r.round_seconds {
            base.time_per_round = seconds(v, "round_seconds")?;
        }
        if let Some(v) = r.budget_seconds {
            base.total_budget = seconds(v, "budget_seconds")?;
        }
        if let Some(v) = r.tv {
            base.tv = v;
        }
        base.walksat_max_tries = r.walksat_max_tries;
        base.random_max_draws = r.random_max_draws;
        if let Some(v) = r.adam_iters {
            base.gp.adam_iters = v;
        }
        base.validate()?;

        let mut instances = Vec::new();
        for entry in &self.instances {
            let inst = match (&entry.path, &entry.generate) {
                (Some(p), None) => Instance::load(
                    &base_dir.join(p),
                    entry.tamper_field.as_deref(),
                    EncodeOptions {
                        consistent_thresholds: entry.consistent_thresholds,
                    },
                )?,
                (None, Some(g)) => Instance::generate(g.vars, g.rules, g.seed)?,
                _ => {
                    return Err(HarnessError::Config(
                        "each instance needs exactly one of `path` or `generate`".into(),
                    ))
                }
            };
            instances.push(inst);
        }
        let scenarios = self
            .scenarios
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<ScenarioSpec>, _>>()?;
        Ok(AblationPlan {
            instances,
            scenarios,
            variants: self.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec()),
            repeats: self.repeats,
            seed: self.seed,
            base,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn out_dir(&self, base_dir: &Path) -> PathBuf {
        base_dir.join(&self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRANSFER: &str = include_str!("../fixtures/transfer.rules");
    const TRANSFER_LOG: &str = include_str!("../fixtures/transfer_log.csv");

    fn transfer() -> (Instance, Vec<Transaction>) {
        let rules = RuleSet::parse(TRANSFER).unwrap();
        let log = rules.parse_transactions(TRANSFER_LOG).unwrap();
        (
            Instance::from_rules("transfer", rules, None, EncodeOptions::default()).unwrap(),
            log,
        )
    }

    fn quick(max_iter: usize) -> RunConfig {
        RunConfig {
            max_iter,
            time_per_round: Duration::from_secs(5),
            total_budget: Duration::from_secs(60),
            ..RunConfig::default()
        }
    }

    #[test]
    fn meter_caps_rounds() {
        let inst = Instance::generate(40, None, 1).unwrap();
        let model = crate::scenario::gen_binomial_model(40, 0.5, 2).unwrap();
        let problem = Problem {
            formula: &inst.formula,
            varmap: inst.varmap(),
            objective: Objective::Model(&model),
        };
        let rep = run_satbo(&problem, &quick(1)).unwrap();
        assert_eq!(rep.rounds.len(), 1);
        assert_eq!(rep.evaluations, 30);
        let rep = run_satbo(&problem, &quick(4)).unwrap();
        assert_eq!(rep.rounds.len(), 4);
        assert_eq!(rep.evaluations, 120);
        let bits = rep.best_bits().unwrap();
        assert!(inst.formula.is_satisfied_by(&bits));
        let bests: Vec<f64> = rep.rounds.iter().filter_map(|r| r.best_so_far).collect();
        assert!(bests.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn transfer_log_run() {
        let (inst, log) = transfer();
        let scen = BoundScenario::Log(log);
        let problem = scen.problem(&inst).unwrap();
        let rep = run_satbo(&problem, &quick(3)).unwrap();
        assert_eq!(rep.best_value, Some(0.75));
        assert_eq!(rep.attack_rule.as_deref(), Some("IF amount <= 10 THEN TAMPER user = vip3"));
        assert_eq!(rep.verification_rule.as_deref(), Some("IF amount <= 10 THEN user != vip3"));
        assert_eq!(rep.synthetic_total, Some(3));
        assert_eq!(rep.synthetic_novel, Some(3));
    }

    #[test]
    fn unsat_is_reported() {
        let f = CnfFormula::from_dimacs_clauses(1, &[vec![1], vec![-1]]);
        let model = CoverageModel::custom(vec![[1.0, 2.0]]).unwrap();
        let problem = Problem {
            formula: &f,
            varmap: None,
            objective: Objective::Model(&model),
        };
        assert!(matches!(run_satbo(&problem, &quick(3)), Err(HarnessError::Unsat)));
        let short = CoverageModel::custom(vec![]).unwrap();
        let problem = Problem {
            objective: Objective::Model(&short),
            ..problem
        };
        assert!(matches!(
            run_satbo(&problem, &quick(3)),
            Err(HarnessError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn variants_match_table() {
        let a = Variant::SatBo1.ablation();
        assert!(!a.rb && a.rfdv && a.rfiv && a.bo);
        assert!(!Variant::SatBo4.ablation().bo);
        assert_eq!(Variant::WalkSatBo.solver(), SolverKind::Walksat);
        assert_eq!("sat-bo3".parse::<Variant>().unwrap(), Variant::SatBo3);
        assert!("SAT-BO9".parse::<Variant>().is_err());
    }

    #[test]
    fn percent_rounds_half_even() {
        assert_eq!(percent(0.87405), 87.4);
        assert_eq!(percent(0.5), 50.0);
        assert_eq!(percent(0.123456), 12.35);
    }

    #[test]
    fn elite_pool_tracks_best() {
        let mut p = ElitePool::default();
        assert!(p.best().is_none());
        p.insert(vec![true], 2.0);
        p.insert(vec![false], 5.0);
        p.insert(vec![false], 1.0);
        assert_eq!(p.best().unwrap().1, 5.0);
        assert_eq!(p.len(), 3);
        assert_eq!(p.distinct(), 2);
    }

    #[test]
    fn ablation_file_parse() {
        let cfg = AblationFile::parse(
            r#"
            seed = 3
            out = "res"
            scenarios = ["binomial:0.5"]
            variants = ["SAT-BO", "Random"]
            [run]
            max_iter = 2
            [[instances]]
            generate = { vars = 20, seed = 1 }
            "#,
        )
        .unwrap();
        let plan = cfg.plan(Path::new(".")).unwrap();
        assert_eq!(plan.base.max_iter, 2);
        assert_eq!(plan.variants, vec![Variant::SatBo, Variant::Random]);
        assert!(AblationFile::parse("out = 1").is_err());
    }
}
