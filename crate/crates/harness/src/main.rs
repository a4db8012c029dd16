use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ttbn_core::network::load_checkpoint;
use ttbn_harness::ablations::{cmd_ablate, AblationId};
use ttbn_harness::config::ExperimentConfig;
use ttbn_harness::error::{HarnessError, Result};
use ttbn_harness::report::{emit_report, read_table};
use ttbn_harness::runner::{cmd_adapt, cmd_eval, cmd_train};
use ttbn_harness::sweep::cmd_sweep;

#[derive(Parser)]
#[command(
    name = "ttbn",
    about = "Test-time batch normalization experiments: training, adaptation grids, ablations, sweeps"
)]
struct Cli {
    /// Experiment config file (JSON; schema documented in the README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a source checkpoint and write it with its training log.
    Train,
    /// Evaluate a checkpoint with frozen source statistics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the adaptation method grid over targets and repetitions.
    Adapt {
        /// Adapt this checkpoint instead of training one per repetition
        /// (requires repetitions = 1).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one of the ablation matrices (A, B, C, or D).
    Ablate {
        #[arg(long)]
        which: String,
    },
    /// Grid-search theta, rho, delta on the source-validation split.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-emit CSV/markdown/manifest from a previously written JSON table.
    Report {
        #[arg(long)]
        table: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        HarnessError::config("--config", "this command needs a config file")
    })?;
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let config = load_config(cli)?;
            let out = config.output_dir.clone();
            let mut print_progress = |record: &ttbn_core::network::EpochRecord| {
                println!(
                    "{{\"epoch\":{},\"loss\":{},\"accuracy\":{}}}",
                    record.epoch, record.loss, record.accuracy
                );
            };
            let artifacts = cmd_train(&config, &out, Some(&mut print_progress))?;
            println!(
                "wrote {} (final accuracy {:.4})",
                out.join("checkpoint.bin").display(),
                artifacts.log.last().map(|r| r.accuracy).unwrap_or(0.0)
            );
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let config = load_config(cli)?;
            let ckpt = load_checkpoint(checkpoint)?;
            let table = cmd_eval(&config, &ckpt)?;
            for path in emit_report(&table, &config.output_dir, "eval")? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Adapt { checkpoint } => {
            let config = load_config(cli)?;
            let override_ckpt = checkpoint
                .as_ref()
                .map(|p| load_checkpoint(p))
                .transpose()?;
            let table = cmd_adapt(&config, override_ckpt, cli.jobs)?;
            for path in emit_report(&table, &config.output_dir, "results")? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Ablate { which } => {
            let config = load_config(cli)?;
            let id: AblationId = which.parse()?;
            let table = cmd_ablate(&config, id, cli.jobs)?;
            let name = format!("ablation_{}", which.to_ascii_lowercase());
            for path in emit_report(&table, &config.output_dir, &name)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Sweep { checkpoint } => {
            let config = load_config(cli)?;
            let override_ckpt = checkpoint
                .as_ref()
                .map(|p| load_checkpoint(p))
                .transpose()?;
            let outcome = cmd_sweep(&config, override_ckpt, cli.jobs)?;
            for path in emit_report(&outcome.table, &config.output_dir, "sweep")? {
                println!("wrote {}", path.display());
            }
            let best_path = config.output_dir.join("sweep_best.json");
            std::fs::write(
                &best_path,
                serde_json::to_string_pretty(&outcome.best).expect("cell serializes"),
            )
            .map_err(|e| HarnessError::Io {
                path: best_path.clone(),
                source: e,
            })?;
            println!("wrote {}", best_path.display());
            println!(
                "best: theta={} rho={} delta={} accuracy={:.4}",
                outcome.best.theta, outcome.best.rho, outcome.best.delta, outcome.best.accuracy
            );
            Ok(())
        }
        Command::Report { table } => {
            let parsed = read_table(table)?;
            let out = cli
                .out
                .clone()
                .or_else(|| table.parent().map(|p| p.to_path_buf()))
                .unwrap_or_else(|| PathBuf::from("."));
            let name = table
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".into());
            for path in emit_report(&parsed, &out, &name)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
