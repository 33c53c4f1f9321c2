use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use etsc_cli::commands::{
    cmd_bench, cmd_convert, cmd_gen, cmd_parity, cmd_verify, BenchArgs, ConvertArgs, GenArgs,
    ParityArgs, VerifyArgs,
};
use etsc_cli::CliError;

/// Convert causal Toeplitz kernels into diagonal state-space models.
#[derive(Debug, Parser)]
#[command(name = "etsc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic kernels.
    Gen(GenArgs),
    /// Convert a kernel file into a modes file.
    Convert(ConvertArgs),
    /// Check a kernel/modes pair and print a JSON report.
    Verify(VerifyArgs),
    /// Compare the origin, cache and ssm inference strategies.
    Parity(ParityArgs),
    /// Run a timing sweep and write CSV.
    Bench(BenchArgs),
}

/// `ETSC_THREADS` caps the worker pool; benchmarks default to one thread so
/// timings are not perturbed.
fn configure_threads(bench: bool) -> Result<(), CliError> {
    let threads = match std::env::var("ETSC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| CliError::Usage(format!("ETSC_THREADS={v:?} is not a positive integer")))?,
        Err(_) if bench => 1,
        Err(_) => return Ok(()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads(matches!(cli.command, Command::Bench(_)))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut out),
        Command::Convert(a) => cmd_convert(a, &mut out),
        Command::Verify(a) => cmd_verify(a, &mut out),
        Command::Parity(a) => cmd_parity(a, &mut out),
        Command::Bench(a) => cmd_bench(a, &mut out),
    }?;
    out.flush().map_err(|e| CliError::io("<stdout>", e))?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
