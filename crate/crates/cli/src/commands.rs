use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::json;
use thiserror::Error;

use killsens::estimators::{estimator_by_id, fitted_order, run, successive_orders, EstimatorError, Execution};
use killsens::identity_checks::{default_suite, IdentityReport};
use killsens::oracle_analytic::{oracle_for_model, OracleError};
use killsens::oracle_pde::pde_oracle;
use killsens::{build_model, build_payoff};

use crate::config::{ConfigError, OracleKind, RunConfig};
use crate::output::{self, Manifest, Row};

/// Exit status when `--assert` is given and a gate is missed.
pub const EXIT_GATE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Value,
    Deriv,
    Oracle,
    Check,
    Convergence,
    Compare,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Value, Command::Deriv, Command::Oracle, Command::Check, Command::Convergence, Command::Compare];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Value => "value",
            Command::Deriv => "deriv",
            Command::Oracle => "oracle",
            Command::Check => "check",
            Command::Convergence => "convergence",
            Command::Compare => "compare",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("oracle failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// Process exit status: 2 for anything wrong with the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Estimator(_) => 2,
            CliError::Oracle(_) | CliError::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Results of one subcommand before anything is written.
#[derive(Debug, Default)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub identities: Vec<IdentityReport>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    /// Gate breaches, reported as failures under `--assert`.
    pub failures: Vec<String>,
    /// Messages for stderr, such as skipped estimators.
    pub notes: Vec<String>,
}

fn execution(cfg: &RunConfig) -> Execution {
    Execution { strict: cfg.strict, threads: cfg.threads }
}

/// Reference value at the configured start point, or `None` when disabled.
fn reference(cfg: &RunConfig, derivative: bool, outcome: &mut Outcome) -> Result<Option<f64>, CliError> {
    let model = build_model(&cfg.model, &cfg.model_params).map_err(ConfigError::from_model)?;
    let payoff = build_payoff(&cfg.payoff, &cfg.payoff_params, model.boundary()).map_err(ConfigError::from_model)?;
    let key = if derivative { "oracle_deriv" } else { "oracle_value" };
    let value = match cfg.oracle {
        OracleKind::None => return Ok(None),
        OracleKind::Analytic => {
            let r = oracle_for_model(model.as_ref(), payoff.as_ref(), cfg.x0, cfg.horizon, derivative)?;
            outcome.summary.insert(
                key.into(),
                json!({ "value": r.value, "method": r.method, "tolerance": r.tolerance, "cross_check": r.cross_check }),
            );
            r.value
        }
        OracleKind::Pde => {
            let r = pde_oracle(model.as_ref(), payoff.as_ref(), cfg.x0, cfg.horizon, cfg.pde.nx, cfg.pde.nt, derivative)?;
            outcome.summary.insert(
                key.into(),
                json!({ "value": r.fine, "method": "crank-nicolson", "coarse": r.coarse, "gap": r.gap(),
                        "nx": r.grid.nx, "nt": r.grid.nt, "right": r.grid.right }),
            );
            r.fine
        }
    };
    Ok(Some(value))
}

fn gate_rows(cfg: &RunConfig, outcome: &mut Outcome) {
    let (sds, rel) = (cfg.gate.sds, cfg.gate.rel);
    let breaches: Vec<String> = outcome
        .rows
        .iter()
        .filter(|r| !r.within(sds, rel))
        .map(|r| {
            format!(
                "{}/{}: |{} - {}| > {sds} * {} + {rel} * |oracle|",
                r.estimator,
                r.engine,
                r.mean,
                r.oracle.unwrap_or(f64::NAN),
                r.stderr
            )
        })
        .collect();
    outcome.failures.extend(breaches);
}

/// Run `ids` on the configured problem. With `skip_unsupported`, estimators
/// that reject the problem are noted and left out.
fn run_estimators(
    cfg: &RunConfig,
    ids: &[&str],
    oracle: Option<f64>,
    skip_unsupported: bool,
    outcome: &mut Outcome,
) -> Result<(), CliError> {
    let problem = cfg.spec().build()?;
    for id in ids {
        let est = estimator_by_id(id)?;
        if skip_unsupported {
            if let Err(e) = est.check(&problem) {
                outcome.notes.push(format!("skipping `{id}`: {e}"));
                continue;
            }
        }
        let r = run(est, &problem, execution(cfg))?;
        outcome.rows.push(Row::from_result(&r, oracle));
    }
    Ok(())
}

fn value(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let oracle = reference(cfg, false, &mut out)?;
    run_estimators(cfg, &["value"], oracle, false, &mut out)?;
    gate_rows(cfg, &mut out);
    Ok(out)
}

fn deriv(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let oracle = reference(cfg, true, &mut out)?;
    let ids = cfg.derivative_selection();
    run_estimators(cfg, &ids, oracle, cfg.estimator == "all", &mut out)?;
    gate_rows(cfg, &mut out);
    Ok(out)
}

fn compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let value_oracle = reference(cfg, false, &mut out)?;
    run_estimators(cfg, &["value"], value_oracle, false, &mut out)?;
    let deriv_oracle = reference(cfg, true, &mut out)?;
    run_estimators(cfg, &killsens::estimators::DERIVATIVE_IDS, deriv_oracle, true, &mut out)?;
    gate_rows(cfg, &mut out);
    Ok(out)
}

fn oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    if cfg.oracle == OracleKind::None {
        return Err(ConfigError::Invalid { key: "oracle", message: "`oracle` needs analytic or pde".into() }.into());
    }
    for (derivative, name) in [(false, "oracle-value"), (true, "oracle-deriv")] {
        let started = Instant::now();
        let key = if derivative { "oracle_deriv" } else { "oracle_value" };
        let v = match reference(cfg, derivative, &mut out) {
            Ok(v) => v.expect("oracle enabled"),
            Err(CliError::Oracle(OracleError::NoDerivative)) if derivative => continue,
            Err(e) => return Err(e),
        };
        let tolerance = out.summary[key].get("gap").or_else(|| out.summary[key].get("tolerance")).and_then(|t| t.as_f64());
        out.rows.push(Row {
            estimator: name.into(),
            engine: format!("{:?}", cfg.oracle).to_lowercase(),
            n: None,
            m: None,
            mean: v,
            stderr: tolerance.unwrap_or(0.0),
            oracle: None,
            abs_err: None,
            z: None,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

fn check() -> Outcome {
    let mut out = Outcome { identities: default_suite(), ..Outcome::default() };
    let failed: Vec<String> = out.identities.iter().filter(|r| !r.pass).map(|r| r.to_string()).collect();
    out.summary.insert("identities".into(), json!(out.identities.len()));
    out.summary.insert("failed".into(), json!(failed.len()));
    out.failures = failed;
    out
}

/// Sweep the step count, reporting the weak order of the bias against the oracle.
fn convergence(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let id = if cfg.estimator == "all" { "value" } else { cfg.estimator.as_str() };
    let derivative = id != "value";
    let Some(oracle) = reference(cfg, derivative, &mut out)? else {
        return Err(ConfigError::Invalid { key: "oracle", message: "`convergence` needs an oracle".into() }.into());
    };
    let est = estimator_by_id(id)?;
    let mut biases = Vec::new();
    for &n in &cfg.convergence_steps {
        let problem = cfg.spec_with_steps(n).build()?;
        let r = run(est, &problem, execution(cfg))?;
        biases.push((n, r.mean - oracle));
        out.rows.push(Row::from_result(&r, Some(oracle)));
    }
    let order = fitted_order(&biases);
    out.summary.insert("estimator".into(), json!(id));
    out.summary.insert("order".into(), json!(order));
    out.summary.insert("successive_orders".into(), json!(successive_orders(&biases)));
    let [lo, hi] = cfg.gate.order;
    if !(lo..=hi).contains(&order) {
        out.failures.push(format!("fitted order {order:.4} outside [{lo}, {hi}]"));
    }
    Ok(out)
}

/// Run `cmd` on an already validated config.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Value => value(cfg),
        Command::Deriv => deriv(cfg),
        Command::Oracle => oracle(cfg),
        Command::Check => Ok(check()),
        Command::Convergence => convergence(cfg),
        Command::Compare => compare(cfg),
    }
}

/// Write the CSV tables and the manifest into `cfg.out`; returns the manifest path.
pub fn write_artifacts(
    cmd: Command,
    cfg: &RunConfig,
    outcome: &Outcome,
    started_unix: u64,
    wall_seconds: f64,
) -> Result<PathBuf, CliError> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let mut files = Vec::new();
    if cmd == Command::Check {
        let p = dir.join(output::IDENTITIES_FILE);
        output::write_identities(&p, &outcome.identities).map_err(io_err(format!("writing {}", p.display())))?;
        files.push(PathBuf::from(output::IDENTITIES_FILE));
    } else {
        let p = dir.join(output::RESULTS_FILE);
        output::write_rows(&p, &outcome.rows).map_err(io_err(format!("writing {}", p.display())))?;
        files.push(PathBuf::from(output::RESULTS_FILE));
    }
    let mut summary = outcome.summary.clone();
    summary.insert("failures".into(), json!(outcome.failures));
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        config: cfg.clone(),
        config_sha256: output::config_hash(cfg),
        seed: cfg.seed,
        started_unix,
        wall_seconds,
        row_seconds: outcome.rows.iter().map(|r| r.seconds).collect(),
        files,
        summary: summary.into(),
    };
    let path = dir.join(output::MANIFEST_FILE);
    output::write_manifest(&path, &manifest).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(path)
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Load a manifest for a rerun, returning its subcommand and config.
pub fn load_manifest(path: &Path) -> Result<(Command, RunConfig), CliError> {
    let m = output::read_manifest(path).map_err(io_err(format!("reading {}", path.display())))?;
    let cmd = Command::parse(&m.command).ok_or_else(|| {
        ConfigError::Invalid { key: "command", message: format!("unknown subcommand `{}` in manifest", m.command) }
    })?;
    m.config.validate()?;
    Ok((cmd, m.config))
}

/// Human-readable table for stdout.
pub fn render(outcome: &Outcome) -> String {
    let mut s = String::new();
    if !outcome.rows.is_empty() {
        s += &format!(
            "{:<10} {:<20} {:>5} {:>9} {:>12} {:>10} {:>12} {:>10} {:>7} {:>8}\n",
            "estimator", "engine", "n", "M", "mean", "stderr", "oracle", "abs_err", "z", "seconds"
        );
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        for r in &outcome.rows {
            s += &format!(
                "{:<10} {:<20} {:>5} {:>9} {:>12.6} {:>10.6} {:>12} {:>10} {:>7} {:>8.2}\n",
                r.estimator,
                r.engine,
                r.n.map_or("-".into(), |n| n.to_string()),
                r.m.map_or("-".into(), |m| m.to_string()),
                r.mean,
                r.stderr,
                opt(r.oracle, 6),
                opt(r.abs_err, 6),
                opt(r.z, 2),
                r.seconds
            );
        }
    }
    for r in &outcome.identities {
        s += &format!("{r}\n");
    }
    if let Some(order) = outcome.summary.get("order") {
        s += &format!("fitted order: {order}\n");
    }
    s
}
