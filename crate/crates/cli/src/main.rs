use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rd2_cli::commands::{self, CorrectionMode, EvalOptions, TrainOptions};
use rd2_cli::config::{load_config, resolve_root};
use rd2_cli::settings::{parse_mount_pose, parse_noise, parse_offset};
use rd2_cli::{curves, CliError};

#[derive(Parser)]
#[command(name = "rd2", version, about = "Train and evaluate force-guided assembly policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a population (or a single trial) and write metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Single trial with the configured hyperparameters.
        #[arg(long)]
        no_pbt: bool,
        /// Run everything on one thread, reproducibly from the seed.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides RD2_RUN_DIR and output_dir).
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Success rate of a checkpoint under initial offsets and sensor noise.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// e.g. `lin=3mm`, `rot=5deg`; defaults to the configured offset.
        #[arg(long)]
        offset: Option<String>,
        /// e.g. `ft=0.2`, `friction=0.2`.
        #[arg(long, default_value = "0")]
        noise: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Accepted for uniformity; evaluation is always single-threaded.
        #[arg(long)]
        deterministic: bool,
        /// Report file (default: <run dir>/eval.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the identity mount with a rigidly transformed sensor mount.
    TransferCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `identity` or `x,y,z,roll,pitch,yaw` (metres, degrees by default).
        #[arg(long)]
        mount_pose: String,
        /// Map measured wrenches back into the training frame.
        #[arg(long, value_enum, default_value = "both")]
        correction: CorrectionMode,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        deterministic: bool,
        /// Report file (default: <run dir>/transfer.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reward-versus-steps CSV files from one or more run directories.
    ExportCurves {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Output directory (default: <first run dir>/curves).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        deterministic: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, no_pbt, deterministic, seed, run_dir } => {
            let cfg = load_config(&config)?;
            let opts = TrainOptions { no_pbt, deterministic, seed, run_dir };
            let (dir, result) = commands::train(&cfg, &opts)?;
            println!(
                "run {}: best trial {} score {:.4} success {:.2} after {} rounds",
                dir.display(),
                result.best_trial,
                result.best_score,
                result.best_success_rate,
                result.rounds
            );
        }
        Command::Eval { config, checkpoint, offset, noise, episodes, seed, deterministic: _, out } => {
            let cfg = load_config(&config)?;
            let opts = EvalOptions {
                offset: offset.as_deref().map(parse_offset).transpose()?.unwrap_or(cfg.task.initial_offset),
                noise: parse_noise(&noise)?,
                episodes,
                seed,
            };
            let report = commands::eval(&cfg, &checkpoint, &opts)?;
            let out = out.unwrap_or_else(|| cfg.output_root(None).join("eval.json"));
            commands::write_report(&out, &report)?;
            println!(
                "success_rate {:.3} mean_reward {:.4} over {} episodes -> {}",
                report.metrics.success_rate,
                report.metrics.mean_reward,
                report.metrics.episodes,
                out.display()
            );
        }
        Command::TransferCheck { config, checkpoint, mount_pose, correction, episodes, seed, deterministic: _, out } => {
            let cfg = load_config(&config)?;
            let mount = parse_mount_pose(&mount_pose)?;
            let report = commands::transfer_check(&cfg, &checkpoint, &mount, correction, episodes, seed)?;
            let out = out.unwrap_or_else(|| cfg.output_root(None).join("transfer.json"));
            commands::write_report(&out, &report)?;
            let show = |m: &Option<rd2::agent::EvalMetrics>| m.as_ref().map_or("-".into(), |m| format!("{:.3}", m.success_rate));
            println!(
                "success_rate identity {:.3} corrected {} uncorrected {} -> {}",
                report.identity.success_rate,
                show(&report.corrected),
                show(&report.uncorrected),
                out.display()
            );
        }
        Command::ExportCurves { run_dirs, out, seed: _, deterministic: _ } => {
            let out = out.unwrap_or_else(|| resolve_root(None, Some(&run_dirs[0])).join("curves"));
            let files = curves::export_curves(&run_dirs, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rd2: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
