use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use falcon_core::config::RunConfig;
use falcon_core::eval::{load_thresholds, EvalReport, Threshold};
use falcon_core::geometry::Track;
use falcon_core::pipeline::Pipeline;
use falcon_core::report::{render, ReportFormat};
use falcon_core::FalconError;

#[derive(Parser)]
#[command(
    name = "falcon",
    version,
    about = "Vision-based gate racing: simulation, perception and imitation learning"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path override, e.g. --set training.epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Artifact directory.
    #[arg(long, default_value = "artifacts", global = true)]
    out: PathBuf,

    /// Worker threads for episode-level parallelism.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured tracks to <out>/tracks and list them.
    Tracks,
    /// Render keypoint observations for regressor training.
    NpeData,
    /// Train one keypoint pose regressor per track.
    TrainNpe,
    /// Fly the noisy expert and record perception errors.
    CollectDq,
    /// Fit conditional 10%/90% error quantiles and report held-out coverage.
    FitQuantiles,
    /// Collect expert demonstrations with perturbed pose inputs.
    CollectDc,
    /// Train the policy (with dataset aggregation when configured).
    TrainPolicy,
    /// Evaluate every configured controller on every track.
    Evaluate {
        /// Thresholds file; exit 1 when any is violated.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Render an evaluation report.
    Report {
        /// Report JSON; defaults to <out>/eval/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => {
            if !path.exists() {
                bail!("config file {} does not exist", path.display());
            }
            RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Ok(seed) = std::env::var("FALCON_SEED") {
        cfg.seed = seed
            .parse()
            .with_context(|| format!("FALCON_SEED={seed} is not an unsigned integer"))?;
    }
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(cfg)
}

fn check_report(
    report: &EvalReport,
    thresholds: Option<&Path>,
    format: Format,
) -> anyhow::Result<bool> {
    let thresholds: Vec<Threshold> = match thresholds {
        Some(p) => {
            load_thresholds(p).with_context(|| format!("loading thresholds {}", p.display()))?
        }
        None => Vec::new(),
    };
    let format = match format {
        Format::Table => ReportFormat::Table,
        Format::Csv => ReportFormat::Csv,
    };
    let rendered = render(report, &thresholds, format);
    print!("{}", rendered.text);
    for v in &rendered.violations {
        eprintln!("threshold violated: {v}");
    }
    Ok(rendered.violations.is_empty())
}

fn run(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<bool> {
    let pipeline = Pipeline::new(cfg, &cli.out, cli.jobs);
    match &cli.command {
        Command::Tracks => {
            pipeline.run_stage("tracks")?;
            for t in pipeline.load_tracks()? {
                print_track(&t);
            }
        }
        Command::NpeData => pipeline.run_stage("npe-data")?,
        Command::TrainNpe => pipeline.run_stage("train-npe")?,
        Command::CollectDq => pipeline.run_stage("collect-dq")?,
        Command::FitQuantiles => {
            pipeline.run_stage("fit-quantiles")?;
            print!(
                "{}",
                std::fs::read_to_string(pipeline.artifacts.coverage())?
            );
            println!();
        }
        Command::CollectDc => pipeline.run_stage("collect-dc")?,
        Command::TrainPolicy => pipeline.run_stage("train-policy")?,
        Command::Evaluate { thresholds } => {
            pipeline.run_stage("evaluate")?;
            let report = EvalReport::load(&pipeline.artifacts.report())?;
            return check_report(&report, thresholds.as_deref(), Format::Table);
        }
        Command::Report {
            input,
            format,
            thresholds,
        } => {
            let path = input.clone().unwrap_or_else(|| pipeline.artifacts.report());
            let report = EvalReport::load(&path)
                .with_context(|| format!("reading report {}", path.display()))?;
            return check_report(&report, thresholds.as_deref(), *format);
        }
        Command::Pipeline { thresholds } => {
            let report = pipeline.run_all()?;
            return check_report(&report, thresholds.as_deref(), Format::Table);
        }
        Command::Config => println!("{}", cfg.to_json()?),
    }
    Ok(true)
}

fn print_track(t: &Track) {
    println!(
        "{}: {} gates, {}",
        t.name,
        t.gates.len(),
        if t.laps_close_cycle { "closed" } else { "open" }
    );
    for (i, g) in t.gates.iter().enumerate() {
        let c = &g.center;
        println!(
            "  gate {i}: ({:.2}, {:.2}, {:.2}) yaw {:.1} deg",
            c.x,
            c.y,
            c.z,
            c.yaw.to_degrees()
        );
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| match c.downcast_ref::<FalconError>() {
        Some(FalconError::Config(_)) => true,
        Some(FalconError::Stage { source, .. }) => matches!(**source, FalconError::Config(_)),
        _ => false,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&cli, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            })
        }
    }
}
