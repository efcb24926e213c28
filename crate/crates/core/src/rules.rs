//! Verification-rule DSL, transaction checking, rule-to-CNF encoding and the
//! decoding of SAT solutions back into attack rules.
//!
//! Rule files are line oriented:
//!
//! ```text
//! # comment
//! FIELD user CAT {vip1,vip2,vip3}
//! FIELD amount NUM
//! TAMPER user
//! R3: IF user = vip2 THEN amount <= 5
//! IF TRUE THEN user != vip1
//! ```
//!
//! Every distinct atomic predicate becomes one SAT variable. `≠`, `>` and `≥`
//! are stored as the negation of `=`, `≤` and `<` so that `amount > 10` and
//! `amount <= 10` share a variable.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Assignment, Clause, CnfFormula, Literal};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("operator `{op}` is not allowed on {kind} field `{field}`")]
    BadOperator {
        field: String,
        op: Op,
        kind: &'static str,
    },
    #[error("value `{value}` is not in the domain of `{field}`")]
    NotInDomain { field: String, value: String },
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("transaction is missing field `{0}`")]
    MissingField(String),
    #[error("type mismatch on field `{0}`")]
    TypeMismatch(String),
    #[error("tampered field `{0}` must be categorical with an enumerated domain")]
    TamperNotCategorical(String),
    #[error("no tampered field given")]
    NoTamperField,
    #[error("solution has {0} true tampered-field variables, expected exactly one")]
    TamperCount(usize),
    #[error("assignment is incomplete or has the wrong length")]
    BadAssignment,
    #[error("transaction log is empty")]
    EmptyLog,
    #[error("csv: {0}")]
    Csv(String),
}

/// Exact decimal with six fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Decimal(i64);

impl Decimal {
    const SCALE: i64 = 1_000_000;
    const DIGITS: usize = 6;

    pub fn from_int(v: i64) -> Self {
        Decimal(v * Self::SCALE)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl FromStr for Decimal {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RuleError::BadNumber(s.to_string());
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || frac_part.len() > Self::DIGITS
        {
            return Err(bad());
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        for _ in frac_part.len()..Self::DIGITS {
            frac *= 10;
        }
        let mag = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(Decimal(if neg { -mag } else { mag }))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let mag = self.0.unsigned_abs();
        let int = mag / Self::SCALE as u64;
        let frac = mag % Self::SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{sign}{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Eq,
    Ne,
    Le,
    Lt,
    Ge,
    Gt,
}

impl Op {
    // Longest tokens first so `<=` is not read as `<`.
    const TOKENS: [(&'static str, Op); 9] = [
        ("!=", Op::Ne),
        ("<=", Op::Le),
        (">=", Op::Ge),
        ("≠", Op::Ne),
        ("≤", Op::Le),
        ("≥", Op::Ge),
        ("=", Op::Eq),
        ("<", Op::Lt),
        (">", Op::Gt),
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Le => "<=",
            Op::Lt => "<",
            Op::Ge => ">=",
            Op::Gt => ">",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Cat(String),
    Num(Decimal),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Cat(s) => f.write_str(s),
            Value::Num(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predicate {
    pub field: String,
    pub op: Op,
    pub value: Value,
}

impl Predicate {
    pub fn new(field: impl Into<String>, op: Op, value: Value) -> Self {
        Predicate {
            field: field.into(),
            op,
            value,
        }
    }

    pub fn holds(&self, t: &Transaction) -> Result<bool, RuleError> {
        let actual = t
            .get(&self.field)
            .ok_or_else(|| RuleError::MissingField(self.field.clone()))?;
        match (actual, &self.value) {
            (Value::Cat(a), Value::Cat(b)) => match self.op {
                Op::Eq => Ok(a == b),
                Op::Ne => Ok(a != b),
                _ => Err(RuleError::TypeMismatch(self.field.clone())),
            },
            (Value::Num(a), Value::Num(b)) => Ok(match self.op {
                Op::Eq => a == b,
                Op::Ne => a != b,
                Op::Le => a <= b,
                Op::Lt => a < b,
                Op::Ge => a >= b,
                Op::Gt => a > b,
            }),
            _ => Err(RuleError::TypeMismatch(self.field.clone())),
        }
    }

    /// The canonical atom behind this predicate and whether the predicate is
    /// the atom itself (`true`) or its negation.
    pub fn atom(&self) -> (Atom, bool) {
        let (op, positive) = match self.op {
            Op::Eq => (AtomOp::Eq, true),
            Op::Ne => (AtomOp::Eq, false),
            Op::Le => (AtomOp::Le, true),
            Op::Gt => (AtomOp::Le, false),
            Op::Lt => (AtomOp::Lt, true),
            Op::Ge => (AtomOp::Lt, false),
        };
        (
            Atom {
                field: self.field.clone(),
                op,
                value: self.value.clone(),
            },
            positive,
        )
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.field, self.op, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomOp {
    Eq,
    Le,
    Lt,
}

/// A predicate in positive canonical form: `=`, `<=` or `<`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub field: String,
    pub op: AtomOp,
    pub value: Value,
}

impl Atom {
    pub fn to_predicate(&self) -> Predicate {
        let op = match self.op {
            AtomOp::Eq => Op::Eq,
            AtomOp::Le => Op::Le,
            AtomOp::Lt => Op::Lt,
        };
        Predicate::new(self.field.clone(), op, self.value.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    Categorical(Vec<String>),
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationRule {
    pub id: String,
    /// Empty means the rule always triggers.
    pub precondition: Vec<Predicate>,
    pub body: Predicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    NotPass,
    NotTrigger,
}

pub fn verify_transaction(rule: &VerificationRule, t: &Transaction) -> Result<Outcome, RuleError> {
    let mut triggered = true;
    for p in &rule.precondition {
        // evaluate all predicates so missing fields are reported consistently
        triggered &= p.holds(t)?;
    }
    let body = rule.body.holds(t)?;
    Ok(match (triggered, body) {
        (false, _) => Outcome::NotTrigger,
        (true, true) => Outcome::Pass,
        (true, false) => Outcome::NotPass,
    })
}

impl fmt::Display for VerificationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IF ")?;
        write_conjunction(f, &self.precondition)?;
        write!(f, " THEN {}", self.body)
    }
}

fn write_conjunction(f: &mut fmt::Formatter<'_>, preds: &[Predicate]) -> fmt::Result {
    if preds.is_empty() {
        return f.write_str("TRUE");
    }
    for (i, p) in preds.iter().enumerate() {
        if i > 0 {
            f.write_str(" AND ")?;
        }
        write!(f, "{p}")?;
    }
    Ok(())
}

/// IF precondition THEN tamper field = value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttackRule {
    pub precondition: Vec<Predicate>,
    pub tamper: Predicate,
}

impl AttackRule {
    pub fn triggers(&self, t: &Transaction) -> Result<bool, RuleError> {
        for p in &self.precondition {
            if !p.holds(t)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The synthetic transaction this attack derives from `t`, if it triggers.
    pub fn apply(&self, t: &Transaction) -> Result<Option<Transaction>, RuleError> {
        if !self.triggers(t)? {
            return Ok(None);
        }
        let mut out = t.clone();
        out.values
            .insert(self.tamper.field.clone(), self.tamper.value.clone());
        Ok(Some(out))
    }
}

impl fmt::Display for AttackRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IF ")?;
        write_conjunction(f, &self.precondition)?;
        write!(f, " THEN TAMPER {}", self.tamper)
    }
}

/// Closes the gap an attack exposes: same precondition, body `field != value`.
pub fn invert_attack_rule(attack: &AttackRule, id: impl Into<String>) -> VerificationRule {
    let body = Predicate {
        op: Op::Ne,
        ..attack.tamper.clone()
    };
    VerificationRule {
        id: id.into(),
        precondition: attack.precondition.clone(),
        body,
    }
}

/// Reads an inverted rule back as an attack (`!=` body becomes `=` tamper).
pub fn attack_from_inverted(rule: &VerificationRule) -> AttackRule {
    let tamper = Predicate {
        op: match rule.body.op {
            Op::Ne => Op::Eq,
            Op::Eq => Op::Ne,
            other => other,
        },
        ..rule.body.clone()
    };
    AttackRule {
        precondition: rule.precondition.clone(),
        tamper,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transaction {
    pub values: BTreeMap<String, Value>,
}

impl Transaction {
    pub fn new(values: impl IntoIterator<Item = (String, Value)>) -> Self {
        Transaction {
            values: values.into_iter().collect(),
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.values.get(field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub fields: Vec<FieldDecl>,
    pub rules: Vec<VerificationRule>,
    /// Default tampered field from a `TAMPER` line.
    pub tamper: Option<String>,
}

impl RuleSet {
    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut fields: Vec<FieldDecl> = Vec::new();
        let mut rules = Vec::new();
        let mut tamper = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| RuleError::Syntax {
                line: line_no,
                msg: msg.to_string(),
            };
            if let Some(rest) = line.strip_prefix("FIELD ") {
                fields.push(parse_field(rest).map_err(|m| syntax(&m))?);
            } else if let Some(rest) = line.strip_prefix("TAMPER ") {
                tamper = Some(rest.trim().to_string());
            } else {
                let (id, body) = match line.split_once(':') {
                    Some((id, rest)) if !id.contains(' ') && rest.trim_start().starts_with("IF") => {
                        (id.trim().to_string(), rest.trim())
                    }
                    _ => (format!("R{}", rules.len() + 1), line),
                };
                let (pre, then) = split_if_then(body).ok_or_else(|| syntax("expected `IF ... THEN ...`"))?;
                let precondition = parse_conjunction(pre, &fields, line_no)?;
                let body = parse_predicate(then, &fields, line_no)?;
                rules.push(VerificationRule {
                    id,
                    precondition,
                    body,
                });
            }
        }
        if let Some(t) = &tamper {
            if !fields.iter().any(|f| &f.name == t) {
                return Err(RuleError::UnknownField(t.clone()));
            }
        }
        Ok(RuleSet {
            fields,
            rules,
            tamper,
        })
    }

    /// Parses one attack rule line (`IF ... THEN TAMPER field = value`).
    pub fn parse_attack(&self, line: &str) -> Result<AttackRule, RuleError> {
        let syntax = |msg: &str| RuleError::Syntax {
            line: 1,
            msg: msg.to_string(),
        };
        let (pre, then) = split_if_then(line.trim()).ok_or_else(|| syntax("expected `IF ... THEN ...`"))?;
        let then = then
            .strip_prefix("TAMPER")
            .ok_or_else(|| syntax("expected `TAMPER`"))?;
        Ok(AttackRule {
            precondition: parse_conjunction(pre, &self.fields, 1)?,
            tamper: parse_predicate(then.trim(), &self.fields, 1)?,
        })
    }

    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        for f in &self.fields {
            match &f.kind {
                FieldKind::Categorical(domain) => {
                    out.push_str(&format!("FIELD {} CAT {{{}}}\n", f.name, domain.join(",")))
                }
                FieldKind::Numeric => out.push_str(&format!("FIELD {} NUM\n", f.name)),
            }
        }
        if let Some(t) = &self.tamper {
            out.push_str(&format!("TAMPER {t}\n"));
        }
        for r in &self.rules {
            out.push_str(&format!("{}: {}\n", r.id, r));
        }
        out
    }

    /// Reads a CSV log whose header names declared fields. Columns that are
    /// not declared are ignored.
    pub fn parse_transactions(&self, csv_text: &str) -> Result<Vec<Transaction>, RuleError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(csv_text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| RuleError::Csv(e.to_string()))?
            .clone();
        let columns: Vec<Option<&FieldDecl>> = headers.iter().map(|h| self.field(h)).collect();
        let mut out = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| RuleError::Csv(e.to_string()))?;
            let mut values = BTreeMap::new();
            for (cell, decl) in record.iter().zip(&columns) {
                let Some(decl) = decl else { continue };
                let value = match decl.kind {
                    FieldKind::Categorical(_) => Value::Cat(cell.to_string()),
                    FieldKind::Numeric => Value::Num(cell.parse()?),
                };
                values.insert(decl.name.clone(), value);
            }
            out.push(Transaction { values });
        }
        Ok(out)
    }
}

fn split_if_then(s: &str) -> Option<(&str, &str)> {
    let rest = s.strip_prefix("IF")?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let idx = rest.find(" THEN ")?;
    Some((rest[..idx].trim(), rest[idx + 6..].trim()))
}

fn parse_field(rest: &str) -> Result<FieldDecl, String> {
    let mut parts = rest.trim().splitn(3, char::is_whitespace);
    let name = parts.next().filter(|s| !s.is_empty()).ok_or("missing field name")?;
    let kind = parts.next().ok_or("missing field kind")?;
    let kind = match kind {
        "NUM" => FieldKind::Numeric,
        "CAT" => {
            let dom = parts.next().ok_or("missing domain")?.trim();
            let inner = dom
                .strip_prefix('{')
                .and_then(|d| d.strip_suffix('}'))
                .ok_or("domain must be written as {a,b,...}")?;
            let values: Vec<String> = inner
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err("empty domain".into());
            }
            FieldKind::Categorical(values)
        }
        other => return Err(format!("unknown field kind `{other}`")),
    };
    Ok(FieldDecl {
        name: name.to_string(),
        kind,
    })
}

fn parse_conjunction(s: &str, fields: &[FieldDecl], line: usize) -> Result<Vec<Predicate>, RuleError> {
    if s == "TRUE" {
        return Ok(Vec::new());
    }
    s.split(" AND ")
        .map(|p| parse_predicate(p.trim(), fields, line))
        .collect()
}

fn parse_predicate(s: &str, fields: &[FieldDecl], line: usize) -> Result<Predicate, RuleError> {
    let (pos, token, op) = s
        .char_indices()
        .find_map(|(i, _)| {
            Op::TOKENS
                .iter()
                .find(|(tok, _)| s[i..].starts_with(tok))
                .map(|&(tok, op)| (i, tok, op))
        })
        .ok_or_else(|| RuleError::Syntax {
            line,
            msg: format!("no operator in predicate `{s}`"),
        })?;
    let field = s[..pos].trim();
    let raw = s[pos + token.len()..].trim();
    if field.is_empty() || raw.is_empty() {
        return Err(RuleError::Syntax {
            line,
            msg: format!("incomplete predicate `{s}`"),
        });
    }
    let decl = fields
        .iter()
        .find(|f| f.name == field)
        .ok_or_else(|| RuleError::UnknownField(field.to_string()))?;
    let value = match &decl.kind {
        FieldKind::Categorical(domain) => {
            if !matches!(op, Op::Eq | Op::Ne) {
                return Err(RuleError::BadOperator {
                    field: field.to_string(),
                    op,
                    kind: "categorical",
                });
            }
            if !domain.iter().any(|d| d == raw) {
                return Err(RuleError::NotInDomain {
                    field: field.to_string(),
                    value: raw.to_string(),
                });
            }
            Value::Cat(raw.to_string())
        }
        FieldKind::Numeric => {
            if op == Op::Ne {
                return Err(RuleError::BadOperator {
                    field: field.to_string(),
                    op,
                    kind: "numeric",
                });
            }
            Value::Num(raw.parse()?)
        }
    };
    Ok(Predicate::new(field, op, value))
}

/// Bijection between SAT variables and atomic predicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarMap {
    atoms: Vec<Atom>,
    index: HashMap<Atom, u32>,
    tampered_field: String,
    tampered_vars: Vec<u32>,
}

impl VarMap {
    fn new(tampered_field: &str) -> Self {
        VarMap {
            atoms: Vec::new(),
            index: HashMap::new(),
            tampered_field: tampered_field.to_string(),
            tampered_vars: Vec::new(),
        }
    }

    fn intern(&mut self, atom: Atom) -> u32 {
        if let Some(&v) = self.index.get(&atom) {
            return v;
        }
        self.atoms.push(atom.clone());
        let var = self.atoms.len() as u32;
        if atom.field == self.tampered_field {
            self.tampered_vars.push(var);
        }
        self.index.insert(atom, var);
        var
    }

    pub fn num_vars(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, var: u32) -> &Atom {
        &self.atoms[var as usize - 1]
    }

    pub fn var_of(&self, atom: &Atom) -> Option<u32> {
        self.index.get(atom).copied()
    }

    pub fn literal_of(&self, p: &Predicate) -> Option<Literal> {
        let (atom, positive) = p.atom();
        self.var_of(&atom).map(|v| Literal::new(v, positive))
    }

    pub fn tampered_field(&self) -> &str {
        &self.tampered_field
    }

    pub fn tampered_vars(&self) -> &[u32] {
        &self.tampered_vars
    }

    pub fn is_tampered(&self, var: u32) -> bool {
        self.atom(var).field == self.tampered_field
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Add implications between threshold atoms of the same numeric field
    /// (e.g. `amount <= 5` implies `amount <= 10`).
    pub consistent_thresholds: bool,
}

/// Encodes a rule set as CNF: one `¬pre₁ ∨ … ∨ ¬preₖ ∨ body` clause per rule
/// plus an exactly-one constraint over the tampered field's values.
///
/// Variables are numbered with the tampered field's domain first (declaration
/// order), then the remaining atoms in order of first occurrence.
pub fn encode_rules(
    rules: &RuleSet,
    tampered_field: &str,
    opts: EncodeOptions,
) -> Result<(CnfFormula, VarMap), RuleError> {
    let decl = rules
        .field(tampered_field)
        .ok_or_else(|| RuleError::UnknownField(tampered_field.to_string()))?;
    let FieldKind::Categorical(domain) = &decl.kind else {
        return Err(RuleError::TamperNotCategorical(tampered_field.to_string()));
    };

    let mut vm = VarMap::new(tampered_field);
    for value in domain {
        vm.intern(Atom {
            field: tampered_field.to_string(),
            op: AtomOp::Eq,
            value: Value::Cat(value.clone()),
        });
    }

    let mut clause_lits: Vec<Vec<Literal>> = Vec::new();
    for rule in &rules.rules {
        let mut lits = Vec::with_capacity(rule.precondition.len() + 1);
        for p in rule.precondition.iter().chain(std::iter::once(&rule.body)) {
            if rules.field(&p.field).is_none() {
                return Err(RuleError::UnknownField(p.field.clone()));
            }
        }
        for p in &rule.precondition {
            let (atom, positive) = p.atom();
            lits.push(Literal::new(vm.intern(atom), !positive));
        }
        let (atom, positive) = rule.body.atom();
        lits.push(Literal::new(vm.intern(atom), positive));
        clause_lits.push(lits);
    }

    let tampered = vm.tampered_vars().to_vec();
    clause_lits.push(tampered.iter().map(|&v| Literal::pos(v)).collect());
    for (i, &a) in tampered.iter().enumerate() {
        for &b in &tampered[i + 1..] {
            clause_lits.push(vec![Literal::neg(a), Literal::neg(b)]);
        }
    }

    if opts.consistent_thresholds {
        clause_lits.extend(threshold_chains(&vm));
    }

    let clauses = clause_lits.into_iter().filter_map(Clause::new).collect();
    Ok((CnfFormula::new(vm.num_vars(), clauses), vm))
}

// Implications among numeric atoms on the same field.
fn threshold_chains(vm: &VarMap) -> Vec<Vec<Literal>> {
    let mut out = Vec::new();
    let numeric: Vec<(u32, &Atom, Decimal)> = (1..=vm.num_vars() as u32)
        .filter_map(|v| match vm.atom(v).value {
            Value::Num(d) => Some((v, vm.atom(v), d)),
            Value::Cat(_) => None,
        })
        .collect();
    for &(va, a, x) in &numeric {
        for &(vb, b, y) in &numeric {
            if va == vb || a.field != b.field {
                continue;
            }
            // does a imply b?
            let implies = match (a.op, b.op) {
                (AtomOp::Le, AtomOp::Le) | (AtomOp::Lt, AtomOp::Le) | (AtomOp::Lt, AtomOp::Lt) => x <= y,
                (AtomOp::Le, AtomOp::Lt) => x < y,
                (AtomOp::Eq, AtomOp::Le) => x <= y,
                (AtomOp::Eq, AtomOp::Lt) => x < y,
                (AtomOp::Eq, AtomOp::Eq) => false,
                (_, AtomOp::Eq) => false,
            };
            if implies {
                out.push(vec![Literal::neg(va), Literal::pos(vb)]);
            }
            // distinct equalities, or an equality outside a threshold, exclude each other
            let excludes = match (a.op, b.op) {
                (AtomOp::Eq, AtomOp::Eq) => va < vb && x != y,
                (AtomOp::Eq, AtomOp::Le) => x > y,
                (AtomOp::Eq, AtomOp::Lt) => x >= y,
                _ => false,
            };
            if excludes {
                out.push(vec![Literal::neg(va), Literal::neg(vb)]);
            }
        }
    }
    out
}

/// Decodes a satisfying assignment: the single true tampered variable gives
/// the tamper action and every other true variable contributes its atom to
/// the precondition. False variables are ignored.
pub fn decode_solution(s: &Assignment, vm: &VarMap) -> Result<AttackRule, RuleError> {
    let bits = s.to_bits().ok_or(RuleError::BadAssignment)?;
    decode_bits(&bits, vm)
}

pub fn decode_bits(bits: &[bool], vm: &VarMap) -> Result<AttackRule, RuleError> {
    if bits.len() != vm.num_vars() {
        return Err(RuleError::BadAssignment);
    }
    let true_tampered: Vec<u32> = vm
        .tampered_vars()
        .iter()
        .copied()
        .filter(|&v| bits[v as usize - 1])
        .collect();
    if true_tampered.len() != 1 {
        return Err(RuleError::TamperCount(true_tampered.len()));
    }
    let precondition = (1..=vm.num_vars() as u32)
        .filter(|&v| bits[v as usize - 1] && !vm.is_tampered(v))
        .map(|v| vm.atom(v).to_predicate())
        .collect();
    Ok(AttackRule {
        precondition,
        tamper: vm.atom(true_tampered[0]).to_predicate(),
    })
}

/// Fraction of logged transactions whose values satisfy the attack's
/// precondition.
pub fn coverage_on_log(attack: &AttackRule, log: &[Transaction]) -> Result<f64, RuleError> {
    if log.is_empty() {
        return Err(RuleError::EmptyLog);
    }
    let mut hits = 0usize;
    for t in log {
        if attack.triggers(t)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / log.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRANSFER: &str = include_str!("../fixtures/transfer.rules");
    const TRANSFER_LOG: &str = include_str!("../fixtures/transfer_log.csv");

    fn transfer() -> RuleSet {
        RuleSet::parse(TRANSFER).unwrap()
    }

    fn tx(rs: &RuleSet, user: &str, amount: &str) -> Transaction {
        let text = format!("user,amount\n{user},{amount}\n");
        rs.parse_transactions(&text).unwrap().remove(0)
    }

    fn rule(rs: &RuleSet, id: &str) -> VerificationRule {
        rs.rules.iter().find(|r| r.id == id).unwrap().clone()
    }

    #[test]
    fn decimal_parse_and_display() {
        let d: Decimal = "12.5".parse().unwrap();
        assert_eq!(d.to_string(), "12.5");
        assert_eq!("10".parse::<Decimal>().unwrap(), "10.000".parse().unwrap());
        assert_eq!("-0.25".parse::<Decimal>().unwrap().to_string(), "-0.25");
        assert!("1.2.3".parse::<Decimal>().is_err());
        assert!("abc".parse::<Decimal>().is_err());
        assert!("0.0000001".parse::<Decimal>().is_err());
    }

    #[test]
    fn verification_outcomes_of_transfer_rules() {
        let rs = transfer();
        let t1 = tx(&rs, "vip2", "2.5");
        let t2 = tx(&rs, "vip2", "12.5");
        let outcomes = |t: &Transaction| -> Vec<Outcome> {
            ["R1", "R2", "R3", "R4"]
                .iter()
                .map(|id| verify_transaction(&rule(&rs, id), t).unwrap())
                .collect()
        };
        use Outcome::*;
        assert_eq!(outcomes(&t1), vec![Pass, NotTrigger, Pass, Pass]);
        assert_eq!(outcomes(&t2), vec![Pass, NotTrigger, NotPass, NotPass]);
    }

    #[test]
    fn verify_errors() {
        let rs = transfer();
        let r3 = rule(&rs, "R3");
        let missing = Transaction::new([("user".to_string(), Value::Cat("vip2".into()))]);
        assert_eq!(
            verify_transaction(&r3, &missing),
            Err(RuleError::MissingField("amount".into()))
        );
        let wrong = Transaction::new([
            ("user".to_string(), Value::Num(Decimal::from_int(1))),
            ("amount".to_string(), Value::Num(Decimal::from_int(1))),
        ]);
        assert_eq!(
            verify_transaction(&r3, &wrong),
            Err(RuleError::TypeMismatch("user".into()))
        );
    }

    #[test]
    fn boundary_comparison_is_exact() {
        let rs = transfer();
        let r2 = rule(&rs, "R2");
        assert_eq!(verify_transaction(&r2, &tx(&rs, "vip1", "10.0")).unwrap(), Outcome::Pass);
        assert_eq!(
            verify_transaction(&r2, &tx(&rs, "vip1", "10.000001")).unwrap(),
            Outcome::NotPass
        );
    }

    #[test]
    fn transfer_encoding_has_five_vars() {
        let rs = transfer();
        let (cnf, vm) = encode_rules(&rs, "user", EncodeOptions::default()).unwrap();
        assert_eq!(cnf.num_vars(), 5);
        assert_eq!(vm.tampered_vars(), &[1, 2, 3]);
        let names: Vec<String> = (1..=5).map(|v| vm.atom(v).to_predicate().to_string()).collect();
        assert_eq!(
            names,
            ["user = vip1", "user = vip2", "user = vip3", "amount <= 10", "amount <= 5"]
        );
    }

    #[test]
    fn empty_ruleset_only_exactly_one() {
        let rs = RuleSet::parse("FIELD f CAT {a,b}\n").unwrap();
        let (cnf, _) = encode_rules(&rs, "f", EncodeOptions::default()).unwrap();
        let expected = CnfFormula::from_dimacs_clauses(2, &[vec![1, 2], vec![-1, -2]]);
        assert_eq!(cnf, expected);
    }

    #[test]
    fn encode_errors() {
        let rs = RuleSet::parse("FIELD f CAT {a,b}\nFIELD n NUM\n").unwrap();
        assert_eq!(
            encode_rules(&rs, "n", EncodeOptions::default()).unwrap_err(),
            RuleError::TamperNotCategorical("n".into())
        );
        assert_eq!(
            encode_rules(&rs, "zz", EncodeOptions::default()).unwrap_err(),
            RuleError::UnknownField("zz".into())
        );
        assert_eq!(
            RuleSet::parse("FIELD f CAT {a}\nIF g = a THEN f = a\n").unwrap_err(),
            RuleError::UnknownField("g".into())
        );
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            RuleSet::parse("FIELD f CAT {a}\nIF f < a THEN f = a\n"),
            Err(RuleError::BadOperator { .. })
        ));
        assert!(matches!(
            RuleSet::parse("FIELD f CAT {a}\nIF f = b THEN f = a\n"),
            Err(RuleError::NotInDomain { .. })
        ));
        assert!(matches!(
            RuleSet::parse("FIELD f CAT {a}\nwhen f = a\n"),
            Err(RuleError::Syntax { line: 2, .. })
        ));
        assert!(matches!(RuleSet::parse("FIELD f XYZ\n"), Err(RuleError::Syntax { .. })));
    }

    #[test]
    fn dsl_round_trip() {
        let rs = transfer();
        assert_eq!(RuleSet::parse(&rs.to_dsl()).unwrap(), rs);
    }

    #[test]
    fn unicode_operators() {
        let rs = RuleSet::parse("FIELD u CAT {a,b}\nFIELD x NUM\nIF x ≤ 3 THEN u ≠ a\n").unwrap();
        assert_eq!(rs.rules[0].to_string(), "IF x <= 3 THEN u != a");
    }

    #[test]
    fn decode_transfer_solutions() {
        let rs = transfer();
        let (_, vm) = encode_rules(&rs, "user", EncodeOptions::default()).unwrap();
        let s1 = Assignment::complete(&[false, false, true, true, false]);
        let s2 = Assignment::complete(&[false, false, true, false, true]);
        assert_eq!(
            decode_solution(&s1, &vm).unwrap().to_string(),
            "IF amount <= 10 THEN TAMPER user = vip3"
        );
        assert_eq!(
            decode_solution(&s2, &vm).unwrap().to_string(),
            "IF amount <= 5 THEN TAMPER user = vip3"
        );
        let vacuous = Assignment::complete(&[false, false, true, false, false]);
        assert!(decode_solution(&vacuous, &vm).unwrap().precondition.is_empty());
    }

    #[test]
    fn decode_rejects_bad_tamper_count() {
        let rs = transfer();
        let (_, vm) = encode_rules(&rs, "user", EncodeOptions::default()).unwrap();
        let two = Assignment::complete(&[true, false, true, true, false]);
        assert_eq!(decode_solution(&two, &vm), Err(RuleError::TamperCount(2)));
        let none = Assignment::complete(&[false, false, false, true, false]);
        assert_eq!(decode_solution(&none, &vm), Err(RuleError::TamperCount(0)));
        let partial = Assignment::unassigned(5);
        assert_eq!(decode_solution(&partial, &vm), Err(RuleError::BadAssignment));
    }

    #[test]
    fn inversion() {
        let rs = transfer();
        let attack = rs.parse_attack("IF amount <= 10 THEN TAMPER user = vip3").unwrap();
        let inverted = invert_attack_rule(&attack, "N1");
        assert_eq!(inverted.to_string(), "IF amount <= 10 THEN user != vip3");
        assert_eq!(inverted.precondition, attack.precondition);
        assert_eq!(attack_from_inverted(&inverted), attack);

        let always = rs.parse_attack("IF TRUE THEN TAMPER user = vip3").unwrap();
        let r = invert_attack_rule(&always, "N2");
        assert!(r.precondition.is_empty());
        let t = tx(&rs, "vip1", "999");
        assert_ne!(verify_transaction(&r, &t).unwrap(), Outcome::NotTrigger);
    }

    #[test]
    fn log_coverage() {
        let rs = transfer();
        let log = rs.parse_transactions(TRANSFER_LOG).unwrap();
        assert_eq!(log.len(), 4);
        let a1 = rs.parse_attack("IF amount <= 10 THEN TAMPER user = vip3").unwrap();
        let a2 = rs.parse_attack("IF amount <= 5 THEN TAMPER user = vip3").unwrap();
        let a0 = rs.parse_attack("IF TRUE THEN TAMPER user = vip3").unwrap();
        assert_eq!(coverage_on_log(&a1, &log).unwrap(), 0.75);
        assert_eq!(coverage_on_log(&a2, &log).unwrap(), 0.25);
        assert_eq!(coverage_on_log(&a0, &log).unwrap(), 1.0);
        assert_eq!(coverage_on_log(&a0, &[]), Err(RuleError::EmptyLog));
    }

    #[test]
    fn apply_builds_synthetic_transaction() {
        let rs = transfer();
        let a1 = rs.parse_attack("IF amount <= 10 THEN TAMPER user = vip3").unwrap();
        let t = tx(&rs, "vip1", "6.0");
        let synth = a1.apply(&t).unwrap().unwrap();
        assert_eq!(synth.get("user"), Some(&Value::Cat("vip3".into())));
        assert!(a1.apply(&tx(&rs, "vip1", "12")).unwrap().is_none());
    }

    #[test]
    fn threshold_chains_tighten_preconditions() {
        let rs = transfer();
        let opts = EncodeOptions {
            consistent_thresholds: true,
        };
        let (cnf, _) = encode_rules(&rs, "user", opts).unwrap();
        // amount <= 5 now implies amount <= 10, which removes the second solution
        let s2 = [false, false, true, false, true];
        assert!(!cnf.is_satisfied_by(&s2));
        assert!(cnf.is_satisfied_by(&[false, false, true, true, false]));
    }
}
