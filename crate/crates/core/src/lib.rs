//! Weighted SAT sampling and Bayesian optimisation for finding weaknesses in
//! transaction verification rules.

pub mod baselines;
pub mod bo;
pub mod cnf;
pub mod dpll;
pub mod harness;
pub mod rules;
pub mod scenario;
pub mod seeding;

pub use baselines::{random_sample, walksat_sample, RandomConfig, WalkSatConfig};
pub use bo::{init_ci, suggest_prefer, tr_sufficient, update_ci, BoConfig, BoState};
pub use cnf::{parse_dimacs, write_dimacs, Assignment, Clause, CnfError, CnfFormula, Literal};
pub use dpll::{sample_solutions, SampleSet, SamplerConfig, SamplerError, Strategies, WeightVector};
pub use harness::{run_ablation, run_satbo, HarnessError, Instance, RunConfig, RunReport, Variant};
pub use rules::{AttackRule, RuleError, RuleSet, VarMap, VerificationRule};
pub use scenario::{CoverageModel, ScenarioSpec};
