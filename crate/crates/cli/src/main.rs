use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use killsens_cli::commands::{self, load_manifest, render, unix_now};
use killsens_cli::{execute, parse_config, write_artifacts, CliError, Command, ConfigError, OracleKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "killsens", version, about = "Monte Carlo sensitivities of killed diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Killed value E[f(X_n) survival] against the value oracle.
    Value,
    /// Derivative estimators against the derivative oracle.
    Deriv,
    /// Evaluate the reference value and derivative only.
    Oracle,
    /// Run the quadrature identity suite.
    Check,
    /// Sweep the step count and fit the weak order of the bias.
    Convergence,
    /// Value and all derivative estimators in one table.
    Compare,
    /// Repeat a run from its manifest.json.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// reflected, mixed, bel, fd or all (value for `convergence`).
    #[arg(long, global = true)]
    estimator: Option<String>,
    #[arg(long, global = true)]
    engine: Option<String>,
    /// analytic, pde or none.
    #[arg(long, global = true)]
    oracle: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, fixed-order reduction with bitwise reproducible results.
    #[arg(long, global = true)]
    strict: bool,
    /// Exit with status 3 when a result misses its gate.
    #[arg(long = "assert", global = true)]
    assert_gate: bool,
}

impl Flags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = &self.estimator {
            cfg.estimator = v.clone();
        }
        if let Some(v) = &self.engine {
            cfg.engine = v.clone();
        }
        if let Some(v) = &self.oracle {
            cfg.oracle = OracleKind::parse(v).ok_or_else(|| ConfigError::Invalid {
                key: "oracle",
                message: format!("expected analytic, pde or none, got `{v}`"),
            })?;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        if self.strict {
            cfg.strict = true;
        }
        cfg.validate()
    }
}

fn resolve(cli: &Cli) -> Result<(Command, RunConfig), CliError> {
    let (cmd, mut cfg) = match &cli.command {
        Sub::Rerun { manifest } => load_manifest(manifest)?,
        other => {
            let cmd = match other {
                Sub::Value => Command::Value,
                Sub::Deriv => Command::Deriv,
                Sub::Oracle => Command::Oracle,
                Sub::Check => Command::Check,
                Sub::Convergence => Command::Convergence,
                Sub::Compare => Command::Compare,
                Sub::Rerun { .. } => unreachable!(),
            };
            let cfg = match (&cli.flags.config, cmd) {
                (Some(path), _) => parse_config(path)?,
                // the identity suite has fixed inputs
                (None, Command::Check) => RunConfig::minimal("constant", "expm", 0.0, 1.0),
                (None, _) => {
                    return Err(ConfigError::Invalid { key: "config", message: "--config <path> is required".into() }.into())
                }
            };
            (cmd, cfg)
        }
    };
    cli.flags.apply(&mut cfg)?;
    Ok((cmd, cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, cfg) = match resolve(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let started_unix = unix_now();
    let clock = Instant::now();
    let outcome = match execute(cmd, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    for note in &outcome.notes {
        eprintln!("note: {note}");
    }
    print!("{}", render(&outcome));
    match write_artifacts(cmd, &cfg, &outcome, started_unix, clock.elapsed().as_secs_f64()) {
        Ok(path) => println!("manifest: {}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    }
    if !outcome.failures.is_empty() {
        for f in &outcome.failures {
            eprintln!("gate: {f}");
        }
        if cli.flags.assert_gate {
            return ExitCode::from(commands::EXIT_GATE);
        }
    }
    ExitCode::SUCCESS
}
