//! `parimg`: simulate acquisitions, reconstruct them with any method, train
//! learned models and tabulate image-quality metrics.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing input file, 3 bad
//! configuration, 4 method/parameter mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;

#[derive(Debug)]
pub enum CliError {
    MissingFile(String),
    BadConfig(String),
    Mismatch(String),
    Io(String),
    Failed(parimg::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::MissingFile(_) => 2,
            CliError::BadConfig(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::MissingFile(_) => "missing-file",
            CliError::BadConfig(_) => "config",
            CliError::Mismatch(_) => "mismatch",
            CliError::Io(_) => "io",
            CliError::Failed(_) => "failed",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingFile(p) => write!(f, "no such file: {p}"),
            CliError::BadConfig(m) | CliError::Mismatch(m) | CliError::Io(m) => f.write_str(m),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl From<parimg::Error> for CliError {
    fn from(e: parimg::Error) -> Self {
        use parimg::Error as E;
        match e {
            E::Io(io) => CliError::Io(io.to_string()),
            E::Config(m) => CliError::Mismatch(m),
            E::Shape(m) => CliError::Mismatch(format!("shape mismatch: {m}")),
            e @ (E::InsufficientCalibration { .. } | E::InvalidAcceleration(_) | E::InvalidMask(_)) => CliError::Mismatch(e.to_string()),
            other => CliError::Failed(other),
        }
    }
}

#[derive(Parser)]
#[command(name = "parimg", version, about = "Parallel MRI reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// INI experiment configuration; defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, `section.key=value` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write k-space, mask, sensitivities and ground truth for the configured phantom.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one acquisition; writes `<method>.imgc`, `.png` and `.csv`.
    Recon {
        /// zerofill, cgsense, tv, tgv, grappa, spirit, raki, rraki or unrolled
        method: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trained model (required for unrolled, optional for raki).
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train an unrolled network on a simulated dataset, or RAKI on one scan.
    Train {
        /// unrolled or raki
        kind: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare every reconstruction in a directory against a reference image.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Output CSV (default `<recon>/metrics.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PARIMG_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::BadConfig(format!("PARIMG_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::BadConfig(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { cfg, out } => commands::simulate(&cfg.resolve()?, &out),
        Command::Recon { method, data, out, model, cfg } => commands::recon(&method, &data, &out, model.as_deref(), &cfg.resolve()?),
        Command::Train { kind, data, out, cfg } => commands::train(&kind, &data, &out, &cfg.resolve()?),
        Command::Eval { recon, reference, out } => commands::eval(&recon, &reference, out.as_deref()),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.code())
        }
    }
}
