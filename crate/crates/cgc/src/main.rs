use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Constrained-training experiments with conditional gradients.
#[derive(Parser)]
#[command(name = "cgc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Config file (flat dotted-key text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set constraint.lambda=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment and write metrics + summary.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory (overrides the config `out` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the linear-minimization oracles against brute-force oracles.
    CheckLmo {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to one kind: l1, linf, group, nuclear, frobenius, pathnorm, tv.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Check the path-norm dynamic program, γ identity and rescaling invariance.
    CheckPathnorm {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep dual-solve accuracy and fit iterations against 1/eps.
    GapBench {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train { common, out } => {
            cgc::cmd_train(common.config.as_deref(), &common.set, out.as_deref())
        }
        Command::CheckLmo { common, kind } => {
            cgc::cmd_check_lmo(common.config.as_deref(), &common.set, kind.as_deref())
        }
        Command::CheckPathnorm { common } => {
            cgc::cmd_check_pathnorm(common.config.as_deref(), &common.set)
        }
        Command::GapBench { common } => cgc::cmd_gap_bench(common.config.as_deref(), &common.set),
    };
    ExitCode::from(code as u8)
}
