use clap::{Parser, Subcommand, ValueEnum};
use helpseek_cli::config::{self, Overrides};
use helpseek_cli::reproduce;
use helpseek_cli::runner::{self, EvalMode};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "helpseek",
    about = "Seeded experiments for selective help-seeking policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// World preset override: a shipped preset name or a JSON file path.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the warm-start corpus and the initial policy checkpoint.
    Warmstart,
    /// Run group-relative policy-gradient training.
    Train {
        /// Initial checkpoint; defaults to checkpoint_init.json in the
        /// output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with or without search access.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Run a canned experiment suite.
    Reproduce {
        /// One of: selective, oracle-collapse, warmstart-ablation,
        /// severity-sweep.
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Search,
    Abstain,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        preset: cli.preset.clone(),
    };
    let resolved = match config::load(cli.config.as_deref(), &overrides) {
        Ok(resolved) => resolved,
        Err(err) => {
            eprintln!("config error: {err:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match &cli.command {
        Command::Warmstart => runner::run_warmstart(&resolved).map(|_| ()),
        Command::Train { checkpoint } => {
            runner::run_train(&resolved, checkpoint.as_deref()).map(|_| ())
        }
        Command::Eval { checkpoint, mode } => {
            let mode = match mode {
                Mode::Search => EvalMode::Search,
                Mode::Abstain => EvalMode::Abstain,
            };
            runner::run_eval(&resolved, checkpoint, mode).map(|_| ())
        }
        Command::Reproduce { name } => {
            if !reproduce::EXPERIMENT_NAMES.contains(&name.as_str()) {
                eprintln!(
                    "config error: unknown experiment '{name}'; known: {}",
                    reproduce::EXPERIMENT_NAMES.join(", ")
                );
                return ExitCode::from(EXIT_CONFIG);
            }
            reproduce::run_reproduce(name, &resolved).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
