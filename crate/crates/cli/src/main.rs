use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tzitzeica_cli::commands::{self, VerifyOptions};
use tzitzeica_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "tzitzeica", version, about = "Tzitzeica N-soliton construction and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to the path in `[output]`, else standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the field on the configured grid as CSV.
    Field {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_corruption: bool,
    },
    /// Run the verification suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Seed for the randomized route-equivalence points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Verify a field CSV written by `field` instead of the formula.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_corruption: bool,
    },
    /// List grid cells containing zeros of the tau function as CSV.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Soliton velocities as JSON.
    Velocities {
        #[command(flatten)]
        common: Common,
    },
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn setup(common: &Common) -> Result<RunConfig, CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    RunConfig::load(&common.config)
}

/// Returns whether verification passed.
fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Field { common, inject_corruption } => {
            let cfg = setup(&common)?;
            let csv = commands::field_csv(&cfg, inject_corruption)?;
            emit(&csv, common.out.as_deref().or(cfg.output.field.as_deref()))?;
            Ok(true)
        }
        Command::Verify { common, seed, field, inject_corruption } => {
            let cfg = setup(&common)?;
            let report = match field {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
                    commands::verify_file(&cfg, &text)?
                }
                None => commands::verify(&cfg, VerifyOptions { seed, corrupt: inject_corruption })?,
            };
            emit(&to_json(&report)?, common.out.as_deref().or(cfg.output.verify.as_deref()))?;
            Ok(report.pass)
        }
        Command::Scan { common } => {
            let cfg = setup(&common)?;
            let csv = commands::scan_csv(&cfg)?;
            emit(&csv, common.out.as_deref().or(cfg.output.scan.as_deref()))?;
            Ok(true)
        }
        Command::Velocities { common } => {
            let cfg = setup(&common)?;
            let report = commands::velocities(&cfg)?;
            emit(&to_json(&report)?, common.out.as_deref().or(cfg.output.velocities.as_deref()))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::Config(e.to_string().trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
