use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spikeseg_cli::commands::{self, parse_model_arg};
use spikeseg_cli::{extract_overrides, fsio, CliError, ExperimentConfig, Result};

/// Spiking semantic segmentation: train, evaluate, profile and convert.
///
/// Any config key can be overridden with `--key value`, for example
/// `--train.seed 7` or its alias `--seed 7`.
#[derive(Debug, Parser)]
#[command(name = "spikeseg", version)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured model; writes best.sseg, final.sseg and train_log.csv.
    Train,
    /// Per-class IoU of a checkpoint on a split.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Write image | prediction | ground-truth triplets here.
        #[arg(long)]
        dump_overlays: Option<PathBuf>,
    },
    /// Per-layer spike rates and the energy estimate.
    Profile {
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// CSV destination; printed when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an ann checkpoint into a spiking one by threshold balancing.
    Convert {
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// mIoU of a converted checkpoint across simulation lengths.
    Sweep {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// mIoU drop under input noise for one or more `name=checkpoint` models.
    Robustness {
        #[arg(required = true)]
        models: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the spike frames of an image or event file.
    Encode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SPIKESEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SPIKESEG_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::parse(&fsio::read_text(p)?).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", p.display())),
            e => e,
        })?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides)?;
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match cli.command {
        Command::Train => commands::cmd_train(&cfg, out).map(drop),
        Command::Eval {
            checkpoint,
            split,
            dump_overlays,
        } => commands::cmd_eval(&cfg, &checkpoint, &split, dump_overlays.as_deref(), out).map(drop),
        Command::Profile { checkpoint, split, out: csv } => {
            commands::cmd_profile(&cfg, &checkpoint, &split, csv.as_deref(), out).map(drop)
        }
        Command::Convert { checkpoint, out: dest } => commands::cmd_convert(&cfg, &checkpoint, &dest, out).map(drop),
        Command::Sweep { checkpoint, out: csv } => commands::cmd_sweep(&cfg, &checkpoint, csv.as_deref(), out).map(drop),
        Command::Robustness { models, out: csv } => {
            let models: Vec<_> = models.iter().map(|m| parse_model_arg(m)).collect();
            commands::cmd_robustness(&cfg, &models, csv.as_deref(), out).map(drop)
        }
        Command::Synth { out: dir } => commands::cmd_synth(&cfg, &dir, out),
        Command::Encode { input, out: dir } => commands::cmd_encode(&cfg, &input, &dir, out).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let (rest, overrides) = match extract_overrides(&args[1..]) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = Cli::parse_from(std::iter::once(args[0].clone()).chain(rest));
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
