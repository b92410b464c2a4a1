//! `anymole`: runs the in-betweening pipeline one stage at a time.
//!
//! Exit codes: 0 on success, 1 when `--threshold` limits are exceeded,
//! 2 on any input or stage error.

use std::path::PathBuf;
use std::process::ExitCode;

use anymole_cli::stages::{parse_threshold, threshold_failures};
use anymole_cli::{config, init_dir, Outcome, Run, Stage};
use anymole_core::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anymole", version, about = "Keyframe motion in-betweening from a video model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config, or a run manifest to replay its config snapshot.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config field, e.g. `--set mimic.steps_per_sequence=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Re-run stages even when their inputs are unchanged.
    #[arg(long)]
    force: bool,
    /// Skip context adaptation of the video model.
    #[arg(long)]
    no_icadapt: bool,
    /// Hold coarse frames instead of running the fine stage.
    #[arg(long)]
    no_fine_stage: bool,
    /// Weight keyframe samples like context samples.
    #[arg(long)]
    no_keyframe_weighting: bool,
}

#[derive(Args)]
struct Thresholds {
    /// Fail with exit code 1 when a metric exceeds a limit, e.g. `l2p=0.02`.
    #[arg(long = "threshold", value_name = "METRIC=LIMIT")]
    threshold: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default config and the bundled toy motion into a directory.
    Init {
        dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render context frames and keyframes from every view.
    SynthData(Common),
    /// Adapt the video model's spatial parameters to the rendered context.
    Adapt(Common),
    /// Train the scene-specific joint estimator.
    TrainEstimator(Common),
    /// Generate the in-between video in a coarse and a fine stage.
    Generate(Common),
    /// Recover motion from the generated video.
    Mimic(Common),
    /// Compare the recovered motion with the source motion.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        thresholds: Thresholds,
    },
    /// Run every stage in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        thresholds: Thresholds,
    },
}

fn open(common: &Common) -> Result<Run> {
    let mut overrides = common.set.clone();
    for (flag, key) in [
        (common.no_icadapt, "ablation.icadapt"),
        (common.no_fine_stage, "ablation.fine_stage"),
        (common.no_keyframe_weighting, "ablation.keyframe_weighting"),
    ] {
        if flag {
            overrides.push(format!("{key}=false"));
        }
    }
    let config = config::load(&common.config, &overrides)?;
    Run::open(config, common.force)
}

fn report(stage: Stage, outcome: Outcome) {
    match outcome {
        Outcome::Ran => println!("{}: done", stage.name()),
        Outcome::UpToDate => println!("{}: up to date", stage.name()),
    }
}

/// Runs `stages`, then checks thresholds; `Ok(false)` means a limit was exceeded.
fn run_stages(common: &Common, stages: &[Stage], thresholds: &[String]) -> Result<bool> {
    let limits = thresholds.iter().map(|t| parse_threshold(t)).collect::<Result<Vec<_>>>()?;
    let mut run = open(common)?;
    for &stage in stages {
        let outcome = run.execute(stage)?;
        report(stage, outcome);
    }
    if limits.is_empty() {
        return Ok(true);
    }
    let failures = threshold_failures(&run.metrics()?, &limits);
    for f in &failures {
        eprintln!("threshold failed: {f}");
    }
    Ok(failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Init { dir, force } => init_dir(dir, *force).map(|p| {
            println!("wrote {}", p.display());
            true
        }),
        Command::SynthData(c) => run_stages(c, &[Stage::SynthData], &[]),
        Command::Adapt(c) => run_stages(c, &[Stage::Adapt], &[]),
        Command::TrainEstimator(c) => run_stages(c, &[Stage::TrainEstimator], &[]),
        Command::Generate(c) => run_stages(c, &[Stage::Generate], &[]),
        Command::Mimic(c) => run_stages(c, &[Stage::Mimic], &[]),
        Command::Evaluate { common, thresholds } => run_stages(common, &[Stage::Evaluate], &thresholds.threshold),
        Command::Run { common, thresholds } => run_stages(common, &Stage::ALL, &thresholds.threshold),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
