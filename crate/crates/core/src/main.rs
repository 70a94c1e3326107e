use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};

use fgcount::cluster::{ClusterParams, Linkage};
use fgcount::mapgen::{DensityMethod, KernelSpec, DEFAULT_TAU};
use fgcount::pipeline::{self, ConfusionFile, MapOptions};
use fgcount::sim::SimConfig;
use fgcount::Result;

#[derive(Parser)]
#[command(name = "fgcount", version, about = "Fine-grained counting ground truth from crowd-sourced dot annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Cluster each image's dots into consensus objects.
    Aggregate(AggregateArgs),
    /// Render density, segmentation and mask maps from consensus objects.
    Genmaps(GenmapsArgs),
    /// Score prediction map sets against ground-truth map sets.
    Evaluate(EvaluateArgs),
    /// Split images into train/val/test by timestamp.
    Split(SplitArgs),
}

#[derive(Args)]
struct Jobs {
    /// Worker threads (0 = all cores). Output does not depend on this.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 34.0)]
    mean_objects: f64,
    #[arg(long, default_value_t = 11)]
    users: usize,
    #[arg(long, default_value_t = 3.0)]
    sigma_user: f64,
    /// JSON file with per-attribute confusion matrices and/or priors.
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[arg(long, default_value_t = 1280)]
    width: u32,
    #[arg(long, default_value_t = 960)]
    height: u32,
    #[arg(long, default_value_t = 0.0)]
    min_separation: f64,
    #[arg(long, default_value_t = 1.0)]
    participation: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    jobs: Jobs,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, value_enum, default_value_t = Linkage::Average)]
    linkage: Linkage,
    #[arg(long, default_value_t = 24.0)]
    threshold: f64,
    #[arg(long, default_value_t = 2)]
    min_cluster_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    jobs: Jobs,
}

#[derive(Args)]
struct GenmapsArgs {
    #[arg(long)]
    objects: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, value_enum, default_value_t = DensityMethod::Cluster)]
    method: DensityMethod,
    #[arg(long, default_value_t = 12.0)]
    sigma: f64,
    /// Kernel support radius in multiples of sigma.
    #[arg(long, default_value_t = 4.0)]
    truncation: f64,
    /// Keep truncated kernels as sampled instead of rescaling to unit mass.
    #[arg(long)]
    no_renormalize: bool,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    jobs: Jobs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// JSON report path; a CSV table and a manifest are written beside it.
    #[arg(long)]
    report: PathBuf,
    /// Method name for the CSV row.
    #[arg(long, default_value = "pred")]
    name: String,
    #[command(flatten)]
    jobs: Jobs,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    images: PathBuf,
    /// RFC 3339 timestamp or YYYY-MM-DD (midnight UTC).
    #[arg(long, value_parser = parse_time)]
    train_before: DateTime<Utc>,
    #[arg(long, value_parser = parse_time)]
    val_before: DateTime<Utc>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
        .map_err(|_| format!("expected RFC 3339 timestamp or YYYY-MM-DD, got '{s}'"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = SimConfig {
                seed: a.seed,
                width: a.width,
                height: a.height,
                n_images: a.images,
                mean_objects: a.mean_objects,
                min_separation: a.min_separation,
                n_users: a.users,
                participation: a.participation,
                sigma_user: a.sigma_user,
                ..SimConfig::default()
            };
            if let Some(path) = &a.confusion {
                ConfusionFile::read(path)?.apply(&mut cfg);
            }
            let s = pipeline::run_simulate(&cfg, &a.out, a.jobs.jobs)?;
            eprintln!(
                "simulated {} images, {} objects, {} annotations in {:.2}s",
                s.images, s.objects, s.annotations, s.manifest.timing.wall_seconds
            );
        }
        Command::Aggregate(a) => {
            let params = ClusterParams {
                linkage: a.linkage,
                distance_threshold: a.threshold,
                min_cluster_size: a.min_cluster_size,
            };
            let s = pipeline::run_aggregate(&a.annotations, &a.images, &params, &a.out, a.jobs.jobs)?;
            eprintln!(
                "{} objects, {} dots discarded, {:.2}s",
                s.objects, s.discarded_dots, s.manifest.timing.wall_seconds
            );
        }
        Command::Genmaps(a) => {
            let options = MapOptions {
                method: a.method,
                kernel: KernelSpec {
                    sigma: a.sigma,
                    truncation: a.truncation,
                    renormalize: !a.no_renormalize,
                },
                tau: a.tau,
                downsample: a.downsample,
            };
            let m = pipeline::run_genmaps(&a.objects, &a.images, &options, &a.out, a.jobs.jobs)?;
            eprintln!("wrote {} map sets in {:.2}s", m.outputs.len(), m.timing.wall_seconds);
        }
        Command::Evaluate(a) => {
            let (report, _) = pipeline::run_evaluate(&a.pred, &a.gt, &a.report, &a.name, a.jobs.jobs)?;
            eprintln!("{} images: MAE {:.4}, CMMAE {:.4}", report.n_images, report.mae, report.cmmae);
        }
        Command::Split(a) => {
            pipeline::run_split(&a.images, a.train_before, a.val_before, &a.out)?;
            eprintln!("wrote split to {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
