//! pairlearn: train and probe kernel-based regularized pairwise models
//! from JSON run configurations.
//!
//! Every command reads one config file, writes its artifacts into the
//! output directory, and exits 0 only if all invariants it asserts hold.
//! Exit 1 means the command ran but an invariant failed (the reports have
//! the numbers); exit 2 means it could not run at all. Outputs carry no
//! timestamps: identical inputs produce byte-identical files.

mod commands;
mod config;
mod dataio;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CmdOutcome, Ctx};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Lib(#[from] pairlearn::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pairlearn",
    version,
    about = "Regularized pairwise learning: training, influence functions, robustness experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic dataset and write it as CSV.
    GenData(CommonArgs),
    /// Train a model and certify its optimality diagnostics.
    Train(CommonArgs),
    /// Influence function at a Dirac contamination, with its bound chain.
    Influence(CommonArgs),
    /// H-norm bias under mixture contamination against the linear bound.
    BiasSweep(CommonArgs),
    /// Held-out risk trend along a lambda schedule over growing samples.
    Consistency(CommonArgs),
    /// Bootstrap cloud vs fresh-sample cloud energy distances.
    Bootstrap(CommonArgs),
    /// Estimator-law stability under shrinking perturbations.
    Qualrobust(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; its `command` field must match.
    #[arg(long)]
    config: PathBuf,
    /// Input dataset CSV (train, influence, bias-sweep).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Saved model JSON to warm-start from (train only).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory, created if missing. Defaults to the current one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's top-level seed before hashing.
    #[arg(long)]
    seed: Option<u64>,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::GenData(_) => "gen-data",
            Cmd::Train(_) => "train",
            Cmd::Influence(_) => "influence",
            Cmd::BiasSweep(_) => "bias-sweep",
            Cmd::Consistency(_) => "consistency",
            Cmd::Bootstrap(_) => "bootstrap",
            Cmd::Qualrobust(_) => "qualrobust",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Cmd::GenData(a)
            | Cmd::Train(a)
            | Cmd::Influence(a)
            | Cmd::BiasSweep(a)
            | Cmd::Consistency(a)
            | Cmd::Bootstrap(a)
            | Cmd::Qualrobust(a) => a,
        }
    }
}

fn run(cmd: &Cmd) -> Result<CmdOutcome, CliError> {
    let args = cmd.args();
    let name = cmd.name();
    let (config, hash) = config::load(&args.config, name, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let ctx = Ctx {
        config: &config,
        hash: &hash,
        out: &out,
        data: args.data.as_deref(),
        model: args.model.as_deref(),
    };
    match name {
        "gen-data" => commands::gen_data(&ctx),
        "train" => commands::train(&ctx),
        "influence" => commands::influence(&ctx),
        "bias-sweep" => commands::bias_sweep_cmd(&ctx),
        "consistency" => commands::consistency(&ctx),
        "bootstrap" => commands::bootstrap(&ctx),
        "qualrobust" => commands::qualrobust(&ctx),
        _ => unreachable!("clap restricts the command set"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(CmdOutcome { pass: true, .. }) => {
            println!("{}: ok", cli.command.name());
            ExitCode::SUCCESS
        }
        Ok(CmdOutcome { pass: false, failures }) => {
            for f in &failures {
                eprintln!("invariant failed: {f}");
            }
            println!("{}: {} invariant(s) failed", cli.command.name(), failures.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
