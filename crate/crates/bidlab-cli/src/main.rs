//! `bidlab`: generate, train, iterate, evaluate, and report from one
//! config file. Every subcommand writes a self-describing run directory;
//! identical configs and seeds produce byte-identical artifacts.

mod commands;
mod config;
mod error;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{load_context, RunContext};
use crate::error::{validation, CliResult};

#[derive(Parser)]
#[command(name = "bidlab", version, about = "Auto-bidding laboratory")]
struct Cli {
    /// Experiment config (TOML); required by every data-producing command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap the worker-thread count (must come before any parallel work).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Exact output directory; defaults to
    /// `<out_root>/<command>-seed<seed>` under the config's `out_root`
    /// or the `BIDLAB_OUT_ROOT` environment variable.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted behavior policies into an initial dataset.
    GenData {
        /// Episodes per behavior policy per advertiser.
        #[arg(long)]
        episodes_per_policy: Option<usize>,
    },
    /// Train one model on an existing dataset.
    Train {
        /// Objective: rdt, rhat, bc, or dt_baseline.
        #[arg(long)]
        mode: String,
        /// Dataset to train on (JSONL).
        #[arg(long)]
        data: PathBuf,
    },
    /// Roll out a trained model with exploration noise into a candidate pool.
    Generate {
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset the checkpoint was trained on; fixes the iteration number.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full self-training loop: train, roll out, select, merge.
    Iterate {
        /// Override the configured number of rounds.
        #[arg(long)]
        rounds: Option<u32>,
        /// Resume from this dataset instead of generating behavior data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out episodes across all CPA variants.
    Eval {
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Method label in reports; defaults to the checkpoint's mode.
        #[arg(long)]
        label: Option<String>,
        /// Training datasets whose episode seeds must not be evaluated on;
        /// repeat for each file.
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Evaluate dt_baseline at this fixed fraction of the RTG scale
        /// instead of sweeping.
        #[arg(long)]
        dt_rtg_fraction: Option<f64>,
    },
    /// Check model gradients against finite differences.
    Gradcheck {
        /// Use a small fixed model instead of the configured one.
        #[arg(long)]
        toy: bool,
    },
    /// Render the comparison table and quantile series for a run directory.
    Report {
        /// Run directory holding eval_*.json and/or iteration_log.json.
        #[arg(long)]
        run: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Iterate { .. } => "iterate",
            Command::Eval { .. } => "eval",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed;
            // actual parse errors go to stderr and fail validation.
            let code: u8 = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(validation("--threads must be at least 1"));
        }
        if !bidlab::exec::limit_threads(n) {
            eprintln!("warning: worker pool already running; --threads {n} ignored");
        }
    }

    let ctx = match &cli.command {
        Command::Report { .. } => None,
        Command::Gradcheck { toy: true } if cli.config.is_none() => None,
        _ => {
            let path = cli.config.as_deref().ok_or_else(|| {
                validation(format!("{} needs --config", cli.command.name()))
            })?;
            Some(load_context(path)?)
        }
    };

    match &cli.command {
        Command::Gradcheck { toy } => return commands::gradcheck_cmd(ctx.as_ref(), *toy),
        Command::Report { run } => return commands::report_cmd(run),
        _ => {}
    }

    let ctx = ctx.expect("data-producing commands loaded a context above");
    let out = out_dir(&cli, &ctx);
    match cli.command {
        Command::GenData {
            episodes_per_policy,
        } => commands::gen_data(&ctx, out, episodes_per_policy),
        Command::Train { mode, data } => commands::train_cmd(&ctx, out, &mode, &data),
        Command::Generate { checkpoint, data } => {
            commands::generate_cmd(&ctx, out, &checkpoint, &data)
        }
        Command::Iterate { rounds, data } => {
            commands::iterate_cmd(&ctx, out, rounds, data.as_deref())
        }
        Command::Eval {
            checkpoint,
            label,
            data,
            dt_rtg_fraction,
        } => commands::eval_cmd(&ctx, out, &checkpoint, label, &data, dt_rtg_fraction),
        Command::Gradcheck { .. } | Command::Report { .. } => unreachable!("handled above"),
    }
}

/// `--out` names the run directory itself; otherwise a name derived from
/// the command and seed goes under the root from `BIDLAB_OUT_ROOT` or the
/// config's `out_root`.
fn out_dir(cli: &Cli, ctx: &RunContext) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    let root = std::env::var_os("BIDLAB_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| ctx.config.out_root.clone());
    root.join(format!("{}-seed{}", cli.command.name(), ctx.config.seed))
}
