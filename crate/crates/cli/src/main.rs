use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dynodom::config::PipelineConfig;
use dynodom::runner::{evaluate_dirs, run_dataset, EVAL_FILE};
use dynodom::synthdata::{fixtures, write_sequence, Dataset, SceneSpec};

#[derive(Parser)]
#[command(
    name = "dynodom",
    version,
    about = "LiDAR odometry with moving object detection and static mapping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a dataset through the pipeline.
    Run {
        /// Flat key=value configuration file; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Detection and evaluation range limit, meters.
        #[arg(long)]
        range_limit: Option<f64>,
        /// Validate the configuration and dataset, then exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Generate a synthetic dataset.
    Gen {
        /// Scene description (TOML).
        #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
        spec: Option<PathBuf>,
        /// Built-in scene: walker, single-walker, parked-then-moving, static, courtyard.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Print the scene description instead of rendering it.
        #[arg(long)]
        print_spec: bool,
    },
    /// Score predicted masks against a labeled dataset.
    Eval {
        /// Run output directory (or its masks/ directory).
        #[arg(long)]
        pred: PathBuf,
        /// Labeled dataset directory.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        range_limit: f64,
    },
}

fn load_config(path: Option<&PathBuf>, range_limit: Option<f64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = range_limit {
        cfg.detection.range_limit = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            dataset,
            out,
            range_limit,
            dry_run,
        } => {
            let cfg = load_config(config.as_ref(), range_limit)?;
            let ds = Dataset::open(&dataset).with_context(|| format!("opening dataset {}", dataset.display()))?;
            cfg.sensor.apply(&ds.sensor())?;
            if dry_run {
                println!("configuration valid; dataset has {} frames", ds.len());
                return Ok(());
            }
            let summary = run_dataset(&cfg, &ds, &out)?;
            let m = summary.mean_report();
            println!(
                "{} frames, mean {:.1} ms/scan (odometry {:.1}, projection {:.1}, segmentation {:.1}, tracking {:.1})",
                summary.reports.len(),
                m.total_ms,
                m.odometry_ms,
                m.projection_ms,
                m.segmentation_ms,
                m.tracking_ms
            );
            println!("global map: {} points", summary.map.len());
            if let Some(e) = &summary.eval {
                println!(
                    "dynamic points: IoU {:.3}, precision {:.3}, recall {:.3} (written to {})",
                    e.pooled.iou(),
                    e.pooled.precision(),
                    e.pooled.recall(),
                    out.join(EVAL_FILE).display()
                );
            }
        }
        Command::Gen {
            spec,
            fixture,
            out,
            print_spec,
        } => {
            let scene = match (spec, fixture) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    SceneSpec::from_toml(&text)?
                }
                (None, Some(name)) => match fixtures::by_name(&name) {
                    Some(s) => s,
                    None => bail!("unknown fixture `{name}` (known: {})", fixtures::NAMES.join(", ")),
                },
                (None, None) => unreachable!("clap requires one of --spec or --fixture"),
            };
            if print_spec {
                print!("{}", scene.to_toml());
                return Ok(());
            }
            let manifest = write_sequence(&scene, &out)?;
            println!("wrote {} frames to {}", manifest.frames.len(), out.display());
        }
        Command::Eval {
            pred,
            truth,
            range_limit,
        } => {
            if !(range_limit > 0.0) {
                bail!("--range-limit must be positive");
            }
            let ds = Dataset::open(&truth).with_context(|| format!("opening dataset {}", truth.display()))?;
            let report = evaluate_dirs(&pred, &ds, range_limit)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
