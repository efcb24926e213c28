use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use satbo_core::harness::{
    run_ablation, run_satbo, write_reports, AblationFile, BoundScenario, Instance, RoundTrace, RunConfig,
    RunReport, SolverKind,
};
use satbo_core::rules::EncodeOptions;
use satbo_core::scenario::{gen_instance, InstanceSpec};
use satbo_core::seeding::derive_seed;
use satbo_core::{write_dimacs, ScenarioSpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "satbo", version, about = "Search verification rules for high-coverage attack rules")]
struct Cli {
    /// -v info, -vv debug, -vvv sampler trace (decisions, flips, jumps)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimise a single instance under one scenario.
    Run(RunArgs),
    /// Run an ablation matrix described by a TOML file.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a rule-like benchmark instance.
    Gen {
        #[arg(long)]
        vars: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of rules (defaults to roughly two clauses per variable).
        #[arg(long)]
        rules: Option<usize>,
        /// Writes `<prefix>.rules` and `<prefix>.cnf`; prints the rules otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// DIMACS file or rule file.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    tamper_field: Option<String>,
    /// binomial[:p], power-law or log:<csv>
    #[arg(long, default_value = "binomial")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    max_iter: usize,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, default_value_t = 10.0)]
    round_seconds: f64,
    #[arg(long, default_value_t = 150.0)]
    budget_seconds: f64,
    /// dpll, walksat or random
    #[arg(long, default_value = "dpll")]
    solver: String,
    #[arg(long)]
    no_rb: bool,
    #[arg(long)]
    no_rfdv: bool,
    #[arg(long)]
    no_rfiv: bool,
    #[arg(long)]
    no_bo: bool,
    /// Add implications between thresholds on the same numeric field.
    #[arg(long)]
    consistent_thresholds: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Ablate { config } => ablate(&config),
        Command::Gen { vars, seed, rules, out } => gen(vars, seed, rules, out.as_deref()),
    }
}

fn secs(v: f64, flag: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(v).with_context(|| format!("invalid {flag}: {v}"))
}

fn run(args: RunArgs) -> Result<()> {
    let opts = EncodeOptions {
        consistent_thresholds: args.consistent_thresholds,
    };
    let instance = Instance::load(&args.instance, args.tamper_field.as_deref(), opts)
        .with_context(|| format!("loading {}", args.instance.display()))?;
    let spec: ScenarioSpec = args.scenario.parse()?;
    let scenario = BoundScenario::bind(&spec, &instance, derive_seed(args.seed, &[0]), Path::new("."))?;
    let problem = scenario.problem(&instance)?;

    let mut cfg = RunConfig {
        max_iter: args.max_iter,
        samples_per_round: args.samples,
        time_per_round: secs(args.round_seconds, "--round-seconds")?,
        total_budget: secs(args.budget_seconds, "--budget-seconds")?,
        solver: args.solver.parse::<SolverKind>()?,
        seed: args.seed,
        ..RunConfig::default()
    };
    cfg.ablation.rb = !args.no_rb;
    cfg.ablation.rfdv = !args.no_rfdv;
    cfg.ablation.rfiv = !args.no_rfiv;
    cfg.ablation.bo = !args.no_bo;

    let report = run_satbo(&problem, &cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_run_outputs(&report, &args.out)?;

    match report.best_value {
        Some(v) => println!(
            "best coverage {v} of {} ({:.2}%) after {} rounds, {} evaluations",
            report.upper_bound,
            100.0 * v / report.upper_bound,
            report.rounds.len(),
            report.evaluations
        ),
        None => println!("no solution found in {} rounds", report.rounds.len()),
    }
    if let Some(a) = &report.attack_rule {
        println!("attack rule: {a}");
    }
    if let Some(v) = &report.verification_rule {
        println!("verification rule: {v}");
    }
    Ok(())
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    restart: usize,
    phase: String,
    samples: usize,
    distinct: usize,
    evaluated: usize,
    round_best: Option<f64>,
    round_mean: Option<f64>,
    best_so_far: Option<f64>,
    tr_length: Option<f64>,
    exhausted: bool,
    timed_out: bool,
}

impl From<&RoundTrace> for RoundRow {
    fn from(r: &RoundTrace) -> Self {
        RoundRow {
            round: r.round,
            restart: r.restart,
            phase: serde_json::to_value(r.phase)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            samples: r.samples,
            distinct: r.distinct,
            evaluated: r.evaluated,
            round_best: r.round_best,
            round_mean: r.round_mean,
            best_so_far: r.best_so_far,
            tr_length: r.tr_length,
            exhausted: r.exhausted,
            timed_out: r.timed_out,
        }
    }
}

/// `trace.json`, `rounds.csv` and, for rule instances, `rules.txt`.
fn write_run_outputs(report: &RunReport, out: &Path) -> Result<()> {
    fs::write(out.join("trace.json"), report.to_json() + "\n")?;
    let mut w = csv::Writer::from_path(out.join("rounds.csv"))?;
    for r in &report.rounds {
        w.serialize(RoundRow::from(r))?;
    }
    w.flush()?;
    if let (Some(a), Some(v)) = (&report.attack_rule, &report.verification_rule) {
        fs::write(out.join("rules.txt"), format!("# attack\n{a}\n# verification\n{v}\n"))?;
    }
    Ok(())
}

fn ablate(config: &Path) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let file = AblationFile::parse(&text)?;
    let base_dir = config.parent().unwrap_or(Path::new("."));
    let plan = file.plan(base_dir)?;
    let records = run_ablation(&plan)?;
    let out = file.out_dir(base_dir);
    write_reports(&records, &out)?;
    println!("{} runs written to {}", records.len(), out.display());
    Ok(())
}

fn gen(vars: usize, seed: u64, rules: Option<usize>, out: Option<&Path>) -> Result<()> {
    if vars < 2 {
        bail!("--vars must be at least 2");
    }
    let g = gen_instance(&InstanceSpec { vars, rules }, seed)?;
    match out {
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(with_ext(".rules"), &g.dsl)?;
            fs::write(with_ext(".cnf"), write_dimacs(&g.formula))?;
            println!(
                "{} variables, {} clauses, {} rules",
                g.formula.num_vars(),
                g.formula.num_clauses(),
                g.rules.rules.len()
            );
        }
        None => print!("{}", g.dsl),
    }
    Ok(())
}
