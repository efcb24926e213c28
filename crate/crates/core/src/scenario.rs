//! Synthetic coverage models, the Θ aggregate and a generator of rule-shaped
//! benchmark instances.
//!
//! A coverage model assigns each variable a pair `(g0, g1)`: its contribution
//! to the objective when false and when true. Both generators build the pair
//! from an underlying sequence `P` of length `2n` through `g(v) = 1 + v + v²`,
//! with `g0ᵢ = g(P[2i])` and `g1ᵢ = g(P[2i+1])`.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Assignment, CnfFormula};
use crate::dpll::{sample_solutions, SamplerConfig, Strategies, WeightVector};
use crate::rules::{
    encode_rules, Decimal, EncodeOptions, FieldDecl, FieldKind, Op, Predicate, RuleError, RuleSet,
    Value, VarMap, VerificationRule,
};
use crate::seeding::{derive_seed, rng};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("n = {0} is too small for this model")]
    TooSmall(usize),
    #[error("model has {expected} components, assignment has {got} values")]
    LengthMismatch { expected: usize, got: usize },
    #[error("assignment is incomplete")]
    Incomplete,
    #[error("component {0} is negative or not finite")]
    BadComponent(usize),
    #[error("theta needs at least one instance with a positive upper bound")]
    EmptyTheta,
    #[error("invalid scenario `{0}`")]
    BadSpec(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("instance generation: {0}")]
    Generation(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Binomial,
    PowerLaw,
    Custom,
}

/// Per-variable coverage contributions `(g0, g1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageModel {
    pub kind: ModelKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub components: Vec<[f64; 2]>,
}

impl CoverageModel {
    pub fn custom(components: Vec<[f64; 2]>) -> Result<Self, ScenarioError> {
        let model = CoverageModel {
            kind: ModelKind::Custom,
            n: components.len(),
            seed: None,
            p: None,
            components,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.components.len() != self.n {
            return Err(ScenarioError::LengthMismatch {
                expected: self.n,
                got: self.components.len(),
            });
        }
        if let Some(i) = self
            .components
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0))
        {
            return Err(ScenarioError::BadComponent(i));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let model: CoverageModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    fn from_sequence(kind: ModelKind, seq: &[f64], seed: u64, p: Option<f64>) -> Self {
        let components = seq.chunks(2).map(|c| [component(c[0]), component(c[1])]).collect();
        CoverageModel {
            kind,
            n: seq.len() / 2,
            seed: Some(seed),
            p,
            components,
        }
    }
}

/// `g(v) = 1 + v + v²`.
pub fn component(v: f64) -> f64 {
    1.0 + v + v * v
}

/// The underlying sequence of the binomial model: each of the `2n` values
/// is uniform on `[0, 10]` with probability `p`, otherwise uniform on
/// `[10, 100]`.
pub fn binomial_sequence(n: usize, p: f64, seed: u64) -> Result<Vec<f64>, ScenarioError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ScenarioError::Probability(p));
    }
    if n == 0 {
        return Err(ScenarioError::TooSmall(n));
    }
    let mut r = rng(seed);
    Ok((0..2 * n)
        .map(|_| {
            if r.random_bool(p) {
                r.random_range(0.0..=10.0)
            } else {
                r.random_range(10.0..=100.0)
            }
        })
        .collect())
}

pub fn gen_binomial_model(n: usize, p: f64, seed: u64) -> Result<CoverageModel, ScenarioError> {
    let seq = binomial_sequence(n, p, seed)?;
    Ok(CoverageModel::from_sequence(ModelKind::Binomial, &seq, seed, Some(p)))
}

/// Number of heavy entries in the power-law model, `max(1, round(ln 2n))`.
pub fn powerlaw_heavy_count(n: usize) -> usize {
    ((2.0 * n as f64).ln().round() as usize).max(1)
}

/// The underlying sequence of the power-law model: `powerlaw_heavy_count(n)`
/// distinct positions hold a value uniform on `[1000, 2000]`, the rest are 0.
pub fn powerlaw_sequence(n: usize, seed: u64) -> Result<Vec<f64>, ScenarioError> {
    if n < 2 {
        return Err(ScenarioError::TooSmall(n));
    }
    let mut r = rng(seed);
    let mut seq = vec![0.0; 2 * n];
    for i in index::sample(&mut r, 2 * n, powerlaw_heavy_count(n)) {
        seq[i] = r.random_range(1000.0..=2000.0);
    }
    Ok(seq)
}

pub fn gen_powerlaw_model(n: usize, seed: u64) -> Result<CoverageModel, ScenarioError> {
    let seq = powerlaw_sequence(n, seed)?;
    Ok(CoverageModel::from_sequence(ModelKind::PowerLaw, &seq, seed, None))
}

/// `f(s) = Σ g1ᵢ·[sᵢ] + g0ᵢ·[¬sᵢ]`.
pub fn coverage_of_bits(model: &CoverageModel, bits: &[bool]) -> Result<f64, ScenarioError> {
    if bits.len() != model.components.len() {
        return Err(ScenarioError::LengthMismatch {
            expected: model.components.len(),
            got: bits.len(),
        });
    }
    Ok(model
        .components
        .iter()
        .zip(bits)
        .map(|(c, &b)| c[usize::from(b)])
        .sum())
}

pub fn coverage_of(model: &CoverageModel, s: &Assignment) -> Result<f64, ScenarioError> {
    let bits = s.to_bits().ok_or(ScenarioError::Incomplete)?;
    coverage_of_bits(model, &bits)
}

/// `C = Σ max(g0ᵢ, g1ᵢ)`, the coverage of the best unconstrained assignment.
pub fn upper_bound(model: &CoverageModel) -> f64 {
    model.components.iter().map(|c| c[0].max(c[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub s_star: f64,
    pub upper: f64,
}

/// `Θ = Σ s* / Σ C`.
pub fn theta(results: &[InstanceSummary]) -> Result<f64, ScenarioError> {
    let upper: f64 = results.iter().map(|r| r.upper).sum();
    if upper <= 0.0 {
        return Err(ScenarioError::EmptyTheta);
    }
    Ok(results.iter().map(|r| r.s_star).sum::<f64>() / upper)
}

/// How a run's candidate solutions are scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    Binomial { p: f64 },
    PowerLaw,
    /// Coverage measured on a transaction log CSV.
    Log { path: String },
}

impl FromStr for ScenarioSpec {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScenarioError::BadSpec(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("binomial", None) => Ok(ScenarioSpec::Binomial { p: 0.5 }),
            ("binomial", Some(a)) => {
                let p: f64 = a.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(ScenarioError::Probability(p));
                }
                Ok(ScenarioSpec::Binomial { p })
            }
            ("power-law" | "powerlaw", None) => Ok(ScenarioSpec::PowerLaw),
            ("log", Some(path)) if !path.is_empty() => Ok(ScenarioSpec::Log {
                path: path.to_string(),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioSpec::Binomial { p } => write!(f, "binomial:{p}"),
            ScenarioSpec::PowerLaw => f.write_str("power-law"),
            ScenarioSpec::Log { path } => write!(f, "log:{path}"),
        }
    }
}

impl ScenarioSpec {
    /// Builds the synthetic model for an `n`-variable instance. Log scenarios
    /// have no model.
    pub fn model(&self, n: usize, seed: u64) -> Result<Option<CoverageModel>, ScenarioError> {
        match self {
            ScenarioSpec::Binomial { p } => gen_binomial_model(n, *p, seed).map(Some),
            ScenarioSpec::PowerLaw => gen_powerlaw_model(n, seed).map(Some),
            ScenarioSpec::Log { .. } => Ok(None),
        }
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    /// Exact number of SAT variables.
    pub vars: usize,
    /// Number of verification rules; `None` targets about two clauses per
    /// variable in total.
    pub rules: Option<usize>,
}

impl InstanceSpec {
    pub fn with_vars(vars: usize) -> Self {
        InstanceSpec { vars, rules: None }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub dsl: String,
    pub rules: RuleSet,
    pub formula: CnfFormula,
    pub varmap: VarMap,
    pub tamper_field: String,
}

pub const GENERATED_TAMPER_FIELD: &str = "target";
const GENERATION_ATTEMPTS: u64 = 50;

/// Generates a satisfiable rule set whose encoding has exactly `spec.vars`
/// variables.
///
/// The tampered field `target` has a small enumerated domain. The remaining
/// variables are split between categorical fields (one atom per domain
/// value) and numeric fields (one `<=` threshold atom each). Rules have one
/// or two preconditions and every atom appears in at least one rule.
pub fn gen_instance(spec: &InstanceSpec, seed: u64) -> Result<GeneratedInstance, ScenarioError> {
    if spec.vars < 2 {
        return Err(ScenarioError::TooSmall(spec.vars));
    }
    let mut last_err = String::new();
    for attempt in 0..GENERATION_ATTEMPTS {
        let mut r = rng(derive_seed(seed, &[attempt]));
        let rules = build_rule_set(spec, &mut r)?;
        let (formula, varmap) = encode_rules(&rules, GENERATED_TAMPER_FIELD, EncodeOptions::default())?;
        debug_assert_eq!(formula.num_vars(), spec.vars);
        let cfg = SamplerConfig {
            max_num: 1,
            time_budget: Some(Duration::from_secs(5)),
            seed,
            strategies: Strategies::NONE,
            ..SamplerConfig::default()
        };
        let probe = sample_solutions(&formula, &WeightVector::uniform(formula.num_vars()), &cfg)
            .expect("probe config is valid");
        if probe.is_empty() {
            last_err = if probe.timed_out {
                "satisfiability probe timed out".into()
            } else {
                "generated rules are unsatisfiable".into()
            };
            log::debug!("instance attempt {attempt}: {last_err}");
            continue;
        }
        return Ok(GeneratedInstance {
            dsl: rules.to_dsl(),
            rules,
            formula,
            varmap,
            tamper_field: GENERATED_TAMPER_FIELD.to_string(),
        });
    }
    Err(ScenarioError::Generation(format!(
        "{GENERATION_ATTEMPTS} attempts failed, last: {last_err}"
    )))
}

#[derive(Clone)]
enum GenAtom {
    Cat { field: String, value: String },
    Num { field: String, threshold: i64 },
}

impl GenAtom {
    fn predicate(&self, positive: bool) -> Predicate {
        match self {
            GenAtom::Cat { field, value } => Predicate::new(
                field.clone(),
                if positive { Op::Eq } else { Op::Ne },
                Value::Cat(value.clone()),
            ),
            GenAtom::Num { field, threshold } => Predicate::new(
                field.clone(),
                if positive { Op::Le } else { Op::Gt },
                Value::Num(Decimal::from_int(*threshold)),
            ),
        }
    }
}

fn build_rule_set(spec: &InstanceSpec, r: &mut impl Rng) -> Result<RuleSet, ScenarioError> {
    let n = spec.vars;
    let k = (n as f64 / 15.0).round().clamp(2.0, 6.0) as usize;
    let k = k.min(n);
    let tamper_domain: Vec<String> = (1..=k).map(|i| format!("t{i}")).collect();
    let mut fields = vec![FieldDecl {
        name: GENERATED_TAMPER_FIELD.to_string(),
        kind: FieldKind::Categorical(tamper_domain.clone()),
    }];
    let mut atoms: Vec<GenAtom> = tamper_domain
        .iter()
        .map(|v| GenAtom::Cat {
            field: GENERATED_TAMPER_FIELD.to_string(),
            value: v.clone(),
        })
        .collect();

    let mut remaining = n - k;
    let (mut n_cat, mut n_num) = (0, 0);
    while remaining > 0 {
        let size = r.random_range(2..=5).min(remaining);
        if r.random_bool(0.5) {
            n_cat += 1;
            let name = format!("cat{n_cat}");
            let domain: Vec<String> = (1..=size).map(|i| format!("v{i}")).collect();
            for v in &domain {
                atoms.push(GenAtom::Cat {
                    field: name.clone(),
                    value: v.clone(),
                });
            }
            fields.push(FieldDecl {
                name,
                kind: FieldKind::Categorical(domain),
            });
        } else {
            n_num += 1;
            let name = format!("num{n_num}");
            let mut t = 0;
            for _ in 0..size {
                t += r.random_range(1..=50);
                atoms.push(GenAtom::Num {
                    field: name.clone(),
                    threshold: t,
                });
            }
            fields.push(FieldDecl {
                name,
                kind: FieldKind::Numeric,
            });
        }
        remaining -= size;
    }

    let fixed_clauses = 1 + k * (k - 1) / 2;
    let n_rules = spec
        .rules
        .unwrap_or_else(|| (2 * n).saturating_sub(fixed_clauses).max(1));
    if n_rules == 0 {
        return Err(ScenarioError::Generation("at least one rule is required".into()));
    }

    // every non-tampered atom must occur somewhere
    let mut must_use: Vec<usize> = (k..atoms.len()).collect();
    for i in (1..must_use.len()).rev() {
        must_use.swap(i, r.random_range(0..=i));
    }
    let mut rules = Vec::with_capacity(n_rules);
    for id in 1..=n_rules {
        let rules_left = n_rules - id + 1;
        let mut width = if r.random_bool(0.7) { 3 } else { 2 };
        // widen late rules when unused atoms would otherwise be left over
        while width < 3 && must_use.len() > (rules_left - 1) * 3 + width {
            width += 1;
        }
        let width = width.min(atoms.len());
        let mut chosen: Vec<usize> = Vec::with_capacity(width);
        while chosen.len() < width {
            let a = match must_use.pop() {
                Some(a) if !chosen.contains(&a) => a,
                Some(a) => {
                    must_use.insert(0, a);
                    r.random_range(0..atoms.len())
                }
                None => r.random_range(0..atoms.len()),
            };
            if !chosen.contains(&a) {
                chosen.push(a);
            }
        }
        let body_atom = chosen.pop().expect("width is at least one");
        let precondition = chosen
            .iter()
            .map(|&a| atoms[a].predicate(r.random_bool(0.7)))
            .collect();
        rules.push(VerificationRule {
            id: format!("R{id}"),
            precondition,
            body: atoms[body_atom].predicate(r.random_bool(0.5)),
        });
    }
    if !must_use.is_empty() {
        return Err(ScenarioError::Generation(format!(
            "{n_rules} rules cannot mention all {} atoms",
            atoms.len() - k
        )));
    }
    Ok(RuleSet {
        fields,
        rules,
        tamper: Some(GENERATED_TAMPER_FIELD.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_values() {
        assert_eq!(component(0.0), 1.0);
        assert_eq!(component(10.0), 111.0);
        assert_eq!(component(1000.0), 1_001_001.0);
    }

    #[test]
    fn hand_sum_and_bound() {
        let m = CoverageModel::custom(vec![[1.0, 2.0], [5.0, 1.0], [1.0, 10.0]]).unwrap();
        assert_eq!(coverage_of_bits(&m, &[true, false, true]).unwrap(), 17.0);
        assert_eq!(upper_bound(&m), 17.0);
        assert!(matches!(
            coverage_of(&m, &Assignment::unassigned(3)),
            Err(ScenarioError::Incomplete)
        ));
        assert!(matches!(
            coverage_of_bits(&m, &[true]),
            Err(ScenarioError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn constant_model() {
        let m = CoverageModel::custom(vec![[1.0, 1.0]; 7]).unwrap();
        assert_eq!(coverage_of_bits(&m, &[true, false, true, true, false, false, true]).unwrap(), 7.0);
    }

    #[test]
    fn binomial_concentration() {
        let seq = binomial_sequence(1000, 0.5, 3).unwrap();
        let low = seq.iter().filter(|&&v| v <= 10.0).count() as f64 / seq.len() as f64;
        assert!((0.47..=0.53).contains(&low), "{low}");
        assert!(gen_binomial_model(3, 1.2, 0).is_err());
    }

    #[test]
    fn powerlaw_shape() {
        assert_eq!(powerlaw_heavy_count(100), 5);
        let seq = powerlaw_sequence(100, 8).unwrap();
        assert_eq!(seq.iter().filter(|&&v| v > 0.0).count(), 5);
        assert!(seq.iter().all(|&v| v == 0.0 || (1000.0..=2000.0).contains(&v)));
        let m = gen_powerlaw_model(100, 8).unwrap();
        let ones = m.components.iter().flatten().filter(|&&g| g == 1.0).count();
        assert_eq!(ones, 195);
        assert!(gen_powerlaw_model(1, 0).is_err());
    }

    #[test]
    fn theta_cases() {
        let s = |s_star, upper| InstanceSummary { s_star, upper };
        assert_eq!(theta(&[s(50.0, 100.0)]).unwrap(), 0.5);
        assert_eq!(theta(&[s(3.0, 3.0), s(9.0, 9.0)]).unwrap(), 1.0);
        assert!(theta(&[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = gen_binomial_model(5, 0.3, 11).unwrap();
        let back = CoverageModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let bad = r#"{"kind":"custom","n":2,"components":[[1.0,2.0]]}"#;
        assert!(CoverageModel::from_json(bad).is_err());
    }

    #[test]
    fn scenario_spec_parse() {
        assert_eq!("binomial".parse::<ScenarioSpec>().unwrap(), ScenarioSpec::Binomial { p: 0.5 });
        assert_eq!(
            "binomial:0.25".parse::<ScenarioSpec>().unwrap(),
            ScenarioSpec::Binomial { p: 0.25 }
        );
        assert_eq!("power-law".parse::<ScenarioSpec>().unwrap(), ScenarioSpec::PowerLaw);
        assert_eq!(
            "log:a/b.csv".parse::<ScenarioSpec>().unwrap(),
            ScenarioSpec::Log { path: "a/b.csv".into() }
        );
        for bad in ["", "binomial:x", "binomial:2", "log:", "uniform"] {
            assert!(bad.parse::<ScenarioSpec>().is_err(), "{bad}");
        }
        let spec = ScenarioSpec::Binomial { p: 0.25 };
        assert_eq!(spec.to_string().parse::<ScenarioSpec>().unwrap(), spec);
    }

    #[test]
    fn generated_sizes() {
        for (n, seed) in [(62, 1), (100, 2), (120, 3)] {
            let inst = gen_instance(&InstanceSpec::with_vars(n), seed).unwrap();
            assert_eq!(inst.formula.num_vars(), n);
            let ratio = inst.formula.num_clauses() as f64 / n as f64;
            assert!((1.8..=2.1).contains(&ratio), "ratio {ratio}");
            let reparsed = RuleSet::parse(&inst.dsl).unwrap();
            assert_eq!(reparsed, inst.rules);
        }
    }

    #[test]
    fn degenerate_instance() {
        let inst = gen_instance(&InstanceSpec { vars: 2, rules: Some(1) }, 4).unwrap();
        assert_eq!(inst.formula.num_vars(), 2);
        assert_eq!(inst.rules.rules.len(), 1);
        assert!(gen_instance(&InstanceSpec::with_vars(1), 0).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let a = gen_instance(&InstanceSpec::with_vars(70), 9).unwrap();
        let b = gen_instance(&InstanceSpec::with_vars(70), 9).unwrap();
        assert_eq!(a.dsl, b.dsl);
    }
}
