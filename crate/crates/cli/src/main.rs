//! Command line front end. Loads a JSON run config, rebuilds the instance
//! through the validating library constructors, runs one computation, and
//! prints a deterministic JSON (or, for sweeps, CSV) document. Identical
//! config and seed always produce byte-identical output.
//!
//! Exit codes: 0 on success, 1 on a computation error, 2 on a config
//! validation failure. Failures print a one-line JSON error on stderr.

mod config;
mod output;
mod sweep;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use auditgames::audit::{classify_report, simulate_round, AuditPolicy};
use auditgames::instance::InstanceSpec;
use auditgames::numeric::derive_seed;
use auditgames::oracle::{oracle_dsic_epsilon, oracle_epsilon, perturbation_optimality_check};
use auditgames::types::{sample_types, AgentType};
use auditgames::verification::{
    default_workers, epsilon_dsic_topk, epsilon_exact_threshold_auto, epsilon_mc_threshold_with,
    epsilon_uniform_k, needs_audit, DEFAULT_MC_DELTA,
};

use config::{OracleMode, RunConfig};
use output::{envelope, instance_fingerprint, render_json, write_output};
use sweep::SweepParams;

const DEFAULT_SAMPLES: u64 = 100_000;
const DEFAULT_TRIALS: u32 = 100;
const DEFAULT_MAGNITUDE: f64 = 0.25;

/// Incentive analysis for audit mechanisms: epsilon bounds, report
/// classification, policy checks, and round simulation.
#[derive(Parser)]
#[command(name = "auditgames", version)]
struct Cli {
    /// Path to the JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (json for single results, csv only for sweeps).
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Monte Carlo sample count (overrides the config).
    #[arg(long, global = true)]
    samples: Option<u64>,
    /// Seed for every stochastic step (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Perturbation trials for optimality-check (overrides the config).
    #[arg(long, global = true)]
    trials: Option<u32>,
    /// Monte Carlo confidence parameter in (0, 1) (overrides the config).
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the configured report as sure-truth, sure-lie, or suspicious.
    Classify,
    /// Exact closed-form epsilon for a threshold rule under uniform auditing.
    EpsilonExact,
    /// Monte Carlo epsilon for a threshold rule, with a Hoeffding bound.
    EpsilonMc,
    /// Closed-form epsilon for a top-k rule under rank-based auditing.
    EpsilonTopk,
    /// Dominant-strategy epsilon for a top-k rule.
    EpsilonDsic,
    /// Brute-force enumeration of the best lying deviation.
    EpsilonOracle,
    /// Randomized search for a policy beating the uniform one.
    OptimalityCheck,
    /// Play one audited allocation round.
    Simulate,
    /// Evaluate a command over a grid of B, c, and theta values.
    Sweep,
    /// Whether any type could gain from lying absent audits.
    NeedsAudit,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::EpsilonExact => "epsilon-exact",
            Command::EpsilonMc => "epsilon-mc",
            Command::EpsilonTopk => "epsilon-topk",
            Command::EpsilonDsic => "epsilon-dsic",
            Command::EpsilonOracle => "epsilon-oracle",
            Command::OptimalityCheck => "optimality-check",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::NeedsAudit => "needs-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

/// A failed run: config failures exit 2, computation failures exit 1.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Computation(String),
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn computation(msg: impl Into<String>) -> Self {
        Failure::Computation(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Computation(_) => "computation",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Computation(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Computation(_) => 1,
        }
    }
}

fn computation(e: auditgames::AuditError) -> Failure {
    Failure::Computation(e.to_string())
}

fn to_value<T: serde::Serialize>(value: &T) -> Result<Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::Computation(e.to_string()))
}

/// Resolved command parameters after flag-over-config precedence.
struct Params {
    samples: u64,
    seed: u64,
    trials: u32,
    delta: f64,
    magnitude: f64,
}

fn resolve_params(cli: &Cli, cfg: &RunConfig) -> Result<Params, Failure> {
    let params = Params {
        samples: cli.samples.or(cfg.samples).unwrap_or(DEFAULT_SAMPLES),
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        trials: cli.trials.or(cfg.trials).unwrap_or(DEFAULT_TRIALS),
        delta: cli.delta.or(cfg.delta).unwrap_or(DEFAULT_MC_DELTA),
        magnitude: cfg.magnitude.unwrap_or(DEFAULT_MAGNITUDE),
    };
    if params.samples == 0 {
        return Err(Failure::config("samples must be positive"));
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Failure::config(format!(
            "delta must lie in (0, 1), got {}",
            params.delta
        )));
    }
    if !(params.magnitude > 0.0 && params.magnitude <= 1.0) {
        return Err(Failure::config(format!(
            "magnitude must lie in (0, 1], got {}",
            params.magnitude
        )));
    }
    if params.trials == 0 {
        return Err(Failure::config("trials must be positive"));
    }
    Ok(params)
}

fn uniform_policy_for(instance: &InstanceSpec, seed: u64) -> AuditPolicy {
    if instance.is_threshold() {
        AuditPolicy::Uniform
    } else {
        AuditPolicy::UniformK { policy_seed: seed }
    }
}

fn build_agents(cfg: &RunConfig, instance: &InstanceSpec, entries: &[config::ReportConfig])
    -> Result<Vec<AgentType>, Failure>
{
    entries
        .iter()
        .map(|r| cfg.agent(instance.space(), r).map_err(Failure::Config))
        .collect()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::config("a run needs --config <path>"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid config: {e}")))?;
    cfg.validate_schema().map_err(Failure::Config)?;
    let fingerprint = instance_fingerprint(&cfg).map_err(Failure::Config)?;
    let params = resolve_params(cli, &cfg)?;

    if !matches!(cli.command, Command::Sweep) && cli.format == Some(OutputFormat::Csv) {
        return Err(Failure::config("csv output is only available for sweep"));
    }
    if let Command::Sweep = cli.command {
        return run_sweep_command(cli, &cfg, &fingerprint, &params);
    }

    let instance = cfg.instance().map_err(Failure::Config)?;
    let (seed_out, result): (Option<u64>, Value) = match &cli.command {
        Command::Classify => {
            let report = cfg
                .report
                .as_ref()
                .ok_or_else(|| Failure::config("classify needs a report in the config"))?;
            let agent = cfg.agent(instance.space(), report).map_err(Failure::Config)?;
            let class = classify_report(&instance, &agent).map_err(computation)?;
            let mut m = Map::new();
            m.insert("class".into(), to_value(&class)?);
            m.insert("report".into(), to_value(&agent)?);
            if let Ok(score) = instance.score_of(&agent) {
                m.insert("score".into(), Value::from(score));
            }
            (None, Value::Object(m))
        }
        Command::EpsilonExact => {
            if !instance.is_threshold() {
                return Err(Failure::config(
                    "epsilon-exact needs a threshold allocation rule",
                ));
            }
            let est = epsilon_exact_threshold_auto(&instance).map_err(computation)?;
            (None, to_value(&est)?)
        }
        Command::EpsilonMc => {
            if !instance.is_threshold() {
                return Err(Failure::config(
                    "epsilon-mc needs a threshold allocation rule",
                ));
            }
            let est = epsilon_mc_threshold_with(
                &instance,
                params.samples,
                params.seed,
                params.delta,
                default_workers(),
            )
            .map_err(computation)?;
            (Some(params.seed), to_value(&est)?)
        }
        Command::EpsilonTopk => {
            if !instance.is_topk() {
                return Err(Failure::config(
                    "epsilon-topk needs a top-k allocation rule",
                ));
            }
            let est = epsilon_uniform_k(&instance).map_err(computation)?;
            (None, to_value(&est)?)
        }
        Command::EpsilonDsic => {
            if !instance.is_topk() {
                return Err(Failure::config(
                    "epsilon-dsic needs a top-k allocation rule",
                ));
            }
            let est = epsilon_dsic_topk(&instance).map_err(computation)?;
            (None, to_value(&est)?)
        }
        Command::EpsilonOracle => {
            let policy = uniform_policy_for(&instance, params.seed);
            let seed_out = instance.is_topk().then_some(params.seed);
            match cfg.mode.unwrap_or(OracleMode::Bayes) {
                OracleMode::Bayes => {
                    let outcome = oracle_epsilon(&instance, &policy).map_err(computation)?;
                    (seed_out, to_value(&outcome)?)
                }
                OracleMode::Dominant => {
                    let est = oracle_dsic_epsilon(&instance, &policy).map_err(computation)?;
                    (seed_out, to_value(&est)?)
                }
            }
        }
        Command::OptimalityCheck => {
            let policy = uniform_policy_for(&instance, params.seed);
            let check = perturbation_optimality_check(
                &instance,
                &policy,
                params.trials,
                params.magnitude,
                params.seed,
            )
            .map_err(computation)?;
            (Some(params.seed), to_value(&check)?)
        }
        Command::Simulate => {
            let n = instance.n();
            let (truths, reports) = match (&cfg.true_types, &cfg.reports) {
                (Some(t), Some(r)) => {
                    if t.len() != n || r.len() != n {
                        return Err(Failure::config(format!(
                            "simulate needs {n} true types and {n} reports"
                        )));
                    }
                    let truths = build_agents(&cfg, &instance, t)?;
                    let reports = build_agents(&cfg, &instance, r)?;
                    for (a, b) in truths.iter().zip(&reports) {
                        if a.x != b.x {
                            return Err(Failure::config(
                                "reports may only change the self-reported part",
                            ));
                        }
                    }
                    (truths, reports)
                }
                (Some(t), None) => {
                    if t.len() != n {
                        return Err(Failure::config(format!("simulate needs {n} true types")));
                    }
                    let truths = build_agents(&cfg, &instance, t)?;
                    (truths.clone(), truths)
                }
                (None, Some(_)) => {
                    return Err(Failure::config(
                        "simulate reports need matching true_types",
                    ))
                }
                (None, None) => {
                    let truths = sample_types(instance.prior(), n, derive_seed(params.seed, 0))
                        .map_err(computation)?;
                    (truths.clone(), truths)
                }
            };
            let policy = uniform_policy_for(&instance, derive_seed(params.seed, 2));
            let outcome =
                simulate_round(&instance, &truths, &reports, &policy, derive_seed(params.seed, 1))
                    .map_err(computation)?;
            let result = json!({
                "true_types": to_value(&truths)?,
                "reports": to_value(&reports)?,
                "outcome": to_value(&outcome)?,
            });
            (Some(params.seed), result)
        }
        Command::NeedsAudit => {
            let flag = needs_audit(instance.score_fn(), instance.space(), instance.prior())
                .map_err(computation)?;
            (None, json!({ "needs_audit": flag }))
        }
        Command::Sweep => unreachable!("handled above"),
    };

    let doc = envelope(cli.command.name(), &fingerprint, seed_out, result);
    write_output(&render_json(&doc), cli.out.as_deref()).map_err(Failure::Computation)
}

fn run_sweep_command(
    cli: &Cli,
    cfg: &RunConfig,
    fingerprint: &str,
    params: &Params,
) -> Result<(), Failure> {
    let sweep_cfg = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Failure::config("sweep needs a sweep section in the config"))?;
    let rows = sweep::run_sweep(
        cfg,
        sweep_cfg,
        &SweepParams {
            samples: params.samples,
            seed: params.seed,
            delta: params.delta,
        },
    )?;
    match cli.format.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Csv => {
            let text = sweep::rows_to_csv(&rows).map_err(Failure::Computation)?;
            write_output(&text, cli.out.as_deref()).map_err(Failure::Computation)
        }
        OutputFormat::Json => {
            let seed_out = matches!(sweep_cfg.command, config::SweepCommand::EpsilonMc)
                .then_some(params.seed);
            let doc = envelope(
                "sweep",
                fingerprint,
                seed_out,
                json!({ "rows": sweep::rows_to_json(&rows) }),
            );
            write_output(&render_json(&doc), cli.out.as_deref()).map_err(Failure::Computation)
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(failure) = run(&cli) {
        let err = json!({
            "error": { "kind": failure.kind(), "message": failure.message() }
        });
        eprintln!("{err}");
        std::process::exit(failure.exit_code());
    }
}
