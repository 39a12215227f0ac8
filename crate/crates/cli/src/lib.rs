//! `ptstab` command-line tool: gain synthesis, certificate checks and
//! closed-loop experiments over `ptstab-core`.

pub mod commands;
pub mod config;
pub mod gainfile;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags.
    Usage(String),
    /// Unreadable or malformed input.
    Input(String),
    /// Config keys that failed validation.
    Config(Vec<String>),
    /// Synthesis gave up.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Config(keys) => {
                writeln!(f, "config error in {} key(s):", keys.len())?;
                for k in keys {
                    writeln!(f, "  {k}")?;
                }
                Ok(())
            }
            CliError::Failure(m) => write!(f, "synthesis failed: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ptstab", version, about = "Prescribed-time stabilization of chains of integrators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Synthesize a gain file.
    Synthesize {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long = "b-lower")]
        b_lower: f64,
        /// Upper bound on b, used for the switching parameters (hong only).
        #[arg(long = "b-upper")]
        b_upper: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Width of the switching band around V0 = 1 (hong only).
        #[arg(long, default_value_t = 0.5)]
        m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check every certificate stored in a gain file.
    Verify {
        #[arg(long)]
        gains: PathBuf,
        #[arg(long = "grid-scale", default_value_t = 1)]
        grid_scale: usize,
    },
    /// Run closed-loop simulations from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep one parameter and tabulate ISS metrics.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<output.dir>/sweep_<param>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the tool on `args` (including the program name) and returns the
/// exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    let res = match cli.cmd {
        Cmd::Synthesize { kind, n, b_lower, b_upper, seed, m, out: path } => {
            commands::synthesize(&commands::SynthesizeArgs { kind, n, b_lower, b_upper, seed, m, out: path }, out)
        }
        Cmd::Verify { gains, grid_scale } => match commands::verify(&gains, grid_scale, out) {
            Ok(true) => Ok(()),
            Ok(false) => {
                let _ = writeln!(err, "verification failed");
                return 2;
            }
            Err(e) => Err(e),
        },
        Cmd::Simulate { config, runs, seed } => commands::simulate(&commands::SimulateArgs { config, runs, seed }, out),
        Cmd::Sweep { config, param, values, runs, seed, out: path } => {
            commands::sweep(&commands::SweepArgs { config, param, values, runs, seed, out: path }, out)
        }
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
