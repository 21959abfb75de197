//! The `cmkt` command line: simulate, ingest, train, eval, assess and gradcheck.

pub mod commands;
pub mod config;
pub mod exit;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{Ablation, FoldSelection, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cmkt", version, about = "Counterfactual monotonic knowledge tracing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic practice log and its hidden mastery trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Validate a practice log and export catalogs and difficulty statistics.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train on one cross-validation fold or all five.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: Option<PathBuf>,
        /// 0..=4 or `all`.
        #[arg(long)]
        fold: Option<FoldSelection>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        ablate: Vec<Ablation>,
    },
    /// Evaluate a checkpoint on a split of a practice log.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = commands::eval::Split::Test)]
        split: commands::eval::Split,
        /// Oracle truth CSV to score the assessed mastery against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Export one student's factual and counterfactual mastery trajectory.
    Assess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        student: String,
    },
    /// Compare analytic and numeric gradients of the full objective.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Corrupt the analytic gradient of this slot (tests the checker).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        config: common.config.clone(),
        set: common.set.clone(),
        seed: common.seed,
        out_dir: common.out_dir.clone(),
        ..Overrides::default()
    }
}

fn resolve(ov: Overrides) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::resolve(&ov)?)
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common } => commands::simulate::run(&resolve(overrides(&common))?),
        Command::Ingest { common, log } => commands::ingest::run(&resolve(Overrides {
            log,
            ..overrides(&common)
        })?),
        Command::Train {
            common,
            log,
            fold,
            epochs,
            ablate,
        } => commands::train::run(&resolve(Overrides {
            log,
            fold,
            epochs,
            ablate,
            ..overrides(&common)
        })?)
        .map(|_| ()),
        Command::Eval {
            common,
            checkpoint,
            log,
            split,
            truth,
        } => commands::eval::run(
            &resolve(Overrides {
                log,
                ..overrides(&common)
            })?,
            &checkpoint,
            split,
            truth.as_deref(),
        ),
        Command::Assess {
            common,
            checkpoint,
            log,
            student,
        } => commands::assess::run(
            &resolve(Overrides {
                log,
                ..overrides(&common)
            })?,
            &checkpoint,
            &student,
        )
        .map(|_| ()),
        Command::Gradcheck {
            common,
            epsilon,
            inject_fault,
        } => {
            let explicit_out = common.out_dir.is_some();
            let cfg = resolve(Overrides {
                epsilon,
                ..overrides(&common)
            })?;
            commands::gradcheck::run(&cfg, explicit_out, inject_fault.as_deref()).map(|_| ())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            let code = exit::code_for(&e);
            eprintln!("error: {e:#}");
            code
        }
    }
}
