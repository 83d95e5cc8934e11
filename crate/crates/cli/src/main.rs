use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sitrep::gateway::{BackendKind, RepairLevel};
use sitrep::partition::Thresholds;
use sitrep::pipeline::{inspect, Pipeline, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "sitrep", version, about = "Uncertainty-aware situation reports from crisis posts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify posts into situational-awareness categories.
    Classify(RunArgs),
    /// Sample plausibility and confidence per post.
    Assess(RunArgs),
    /// Split estimates into plausibility-confidence quadrants.
    Partition(RunArgs),
    /// Generate per-cell quadrant and baseline reports.
    Report(RunArgs),
    /// Compute entropy, similarity and consistency metrics.
    Evaluate(RunArgs),
    /// Run the pipeline, all stages unless `--stage` narrows it.
    Run(RunArgs),
    /// Summarize a finished run.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendFlag {
    Mock,
    Live,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Stage to run; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    stage: Vec<Stage>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendFlag>,
    /// Fixture directory for the mock backend.
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    /// Quadrant boundaries as `L:C`, e.g. `3:50`.
    #[arg(long)]
    thresholds: Option<Thresholds>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// 0 = strict JSON, 1 = strip fences and surrounding prose.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    repair_level: Option<u8>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, conflicts_with = "config")]
    output_dir: Option<PathBuf>,
    /// Read the output directory from this configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply_env();
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        match self.backend {
            Some(BackendFlag::Mock) => {
                cfg.backend.kind = BackendKind::Mock;
                cfg.backend.endpoint = None;
                cfg.backend.model_name = None;
            }
            Some(BackendFlag::Live) => {
                cfg.backend.kind = BackendKind::Live;
                cfg.backend.fixture_dir = None;
                cfg.apply_env();
            }
            None => {}
        }
        if let Some(dir) = &self.mock_fixtures {
            cfg.backend.kind = BackendKind::Mock;
            cfg.backend.endpoint = None;
            cfg.backend.model_name = None;
            cfg.backend.fixture_dir = Some(dir.clone());
        }
        if let Some(t) = self.thresholds {
            cfg.thresholds = Thresholds {
                inclusive: cfg.thresholds.inclusive,
                ..t
            };
        }
        if let Some(w) = self.bin_width {
            cfg.bin_width = w;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(level) = self.repair_level {
            cfg.repair_level = RepairLevel::from_u8(level).expect("range checked");
        }
        Ok(cfg)
    }
}

fn run_stages(args: &RunArgs, default: &[Stage]) -> Result<(), PipelineError> {
    let cfg = args.config()?;
    let stages: BTreeSet<Stage> = if args.stage.is_empty() {
        default.iter().copied().collect()
    } else {
        args.stage.iter().copied().collect()
    };
    let out = cfg.output_dir.clone();
    let summary = Pipeline::new(cfg).run(&stages)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", inspect(&out)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Classify(a) => run_stages(&a, &[Stage::Classify]),
        Command::Assess(a) => run_stages(&a, &[Stage::Assess]),
        Command::Partition(a) => run_stages(&a, &[Stage::Partition]),
        Command::Report(a) => run_stages(&a, &[Stage::Report]),
        Command::Evaluate(a) => run_stages(&a, &[Stage::Evaluate]),
        Command::Run(a) => run_stages(&a, &Stage::ALL),
        Command::Inspect(a) => {
            let dir = match (a.output_dir, a.config) {
                (Some(d), _) => d,
                (None, Some(c)) => RunConfig::load(c)?.output_dir,
                (None, None) => PathBuf::from("out"),
            };
            print!("{}", inspect(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.to_json()).expect("json"));
            ExitCode::FAILURE
        }
    }
}
