use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airfunc_cli::commands::{run_command, Command};
use airfunc_cli::config::load_config;
use airfunc_cli::report::Report;
use airfunc_cli::CliError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "airfunc", version, about = "Function computation over fading multiple-access channels")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
#[command(rename_all = "kebab-case")]
enum Cmd {
    /// Error bound at the configured M
    Bound(Common),
    /// Channel uses needed for the configured (eps, delta)
    Cost(Common),
    /// Monte Carlo tail estimate against the bound
    Simulate(Common),
    /// Monte Carlo over a parameter grid
    Sweep(Common),
    /// Concentration self-checks
    CheckConcentration(Common),
    /// Communication cost for an additive kernel model
    MlCost(Common),
    /// Max-consensus parameterisation
    MaxconReport(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set channel.M=500`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the trace of trial 0 to stderr as JSON (simulate only)
    #[arg(long)]
    dump_trace: bool,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output file; defaults to output.path, then stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Cmd {
    fn split(self) -> (Command, Common) {
        match self {
            Cmd::Bound(c) => (Command::Bound, c),
            Cmd::Cost(c) => (Command::Cost, c),
            Cmd::Simulate(c) => (Command::Simulate, c),
            Cmd::Sweep(c) => (Command::Sweep, c),
            Cmd::CheckConcentration(c) => (Command::CheckConcentration, c),
            Cmd::MlCost(c) => (Command::MlCost, c),
            Cmd::MaxconReport(c) => (Command::MaxconReport, c),
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn run(cmd: Command, args: Common) -> Result<i32, CliError> {
    let mut overrides = args.set.clone();
    if let Some(f) = args.format {
        overrides.push(format!("output.format=\"{}\"", if matches!(f, Format::Json) { "json" } else { "csv" }));
    }
    let bundle = load_config(&args.config, &overrides)?;
    let out = args.out.clone().or_else(|| bundle.output.path.clone());
    if let Some(out) = &out {
        let inputs = std::iter::once(args.config.as_path()).chain(bundle.function.model.as_deref());
        for input in inputs {
            if same_file(out, input) {
                return Err(CliError::Validation(format!(
                    "refusing to overwrite input file {} with output",
                    input.display()
                )));
            }
        }
    }
    let outcome = run_command(cmd, &bundle, args.dump_trace)?;
    let text = Report { command: cmd.name(), config: &bundle, table: &outcome.table }.render(&bundle.output.format);
    match out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}")))?,
    }
    if let Some(trace) = outcome.trace {
        eprintln!("{trace}");
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, args) = cli.command.split();
    match run(cmd, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
