use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cstte::config::RunConfig;
use cstte::pipeline::{self, Embedder, Run};
use cstte::{exec, Error, Result};

/// Default parent of run directories when neither `--out` nor `output_dir` is set.
const OUTPUT_ROOT_VAR: &str = "CSTTE_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "cstte", version, about = "Contrastive pre-training of spatial-temporal trajectory embeddings")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run all numeric work on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to evaluate (default: the run's own).
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Baseline instead of a checkpoint: dtw, mean, random (search); mean, mc (destination).
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into the run directory.
    Synth(RunArgs),
    /// Resample, filter, discretise and split the raw trajectories.
    Preprocess(RunArgs),
    /// Contrastive pre-training; writes the checkpoint and training log.
    Pretrain(RunArgs),
    /// Write embeddings of every trajectory as CSV and binary tables.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Similar-trajectory search on the test split.
    EvalSearch(EvalArgs),
    /// Destination prediction on the test split.
    EvalDest(EvalArgs),
    /// Finite-difference check of every operator and the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn open_run(args: &RunArgs) -> Result<Run> {
    let config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let dir = match (&args.out, &config.output_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            let stem = args
                .config
                .as_deref()
                .and_then(Path::file_stem)
                .map_or_else(|| "default".into(), |s| s.to_os_string());
            root.join(stem)
        }
    };
    Ok(Run::new(config, dir))
}

fn embedder(args: &EvalArgs) -> Result<Embedder> {
    match &args.baseline {
        Some(name) => name.parse(),
        None => Ok(Embedder::Checkpoint(args.checkpoint.clone())),
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Synth(args) => {
            let run = open_run(&args)?;
            let s = run.synth()?;
            println!("wrote {} trajectories ({} records) to {}", s.trajectories, s.records, run.raw_path().display());
        }
        Command::Preprocess(args) => {
            let run = open_run(&args)?;
            let s = run.preprocess()?;
            println!(
                "kept {} of {} trajectories ({} collapsed by resampling, {} too short) in {}",
                s.kept,
                s.input,
                s.collapsed_by_resampling,
                s.too_short,
                run.dataset_dir().display()
            );
        }
        Command::Pretrain(args) => {
            let run = open_run(&args)?;
            println!("{}", cstte::pretrain::EpochLog::HEADER);
            let outcome = run.pretrain(|e| println!("{}", e.line()))?;
            println!(
                "best epoch {} (validation loss {:.6}) saved to {}",
                outcome.best.epoch,
                outcome.best.val_loss,
                run.checkpoint_path().display()
            );
        }
        Command::Embed { run, checkpoint } => {
            let run = open_run(&run)?;
            let table = run.embed(checkpoint.as_deref())?;
            println!("embedded {} trajectories into {} dimensions in {}", table.rows.len(), table.dim, run.dir.display());
        }
        Command::EvalSearch(args) => {
            let run = open_run(&args.run)?;
            print!("{}", run.eval_search(&embedder(&args)?)?.text());
        }
        Command::EvalDest(args) => {
            let run = open_run(&args.run)?;
            print!("{}", run.eval_destination(&embedder(&args)?)?.text());
        }
        Command::Gradcheck { seed } => {
            let report = pipeline::run_gradcheck(seed)?;
            print!("{}", report.text());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if threads == Some(0) {
        eprintln!("error: {}", Error::Config("--threads must be at least 1".into()));
        return ExitCode::from(2);
    }
    match exec::with_threads(threads, || execute(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
