use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::error;

use rs2v_core::pipeline::{discover_frames, run_batch, JobConfig, PipelineError, TargetSelection, MANIFEST_FILE};
use rs2v_core::pointcloud::read_kitti_bin;

const EXIT_PARTIAL: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;

/// Generate virtual vehicle-mounted LiDAR frames from roadside LiDAR frames.
#[derive(Parser)]
#[command(name = "rs2v", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a generation job.
    Generate(GenerateArgs),
    /// Print point count and bounds of a KITTI .bin file.
    Inspect { bin: PathBuf },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// TOML job config.
    #[arg(long)]
    config: PathBuf,
    /// Roadside .bin frame or directory of frames.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Label file or directory.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated object ids, or `all-vehicles`.
    #[arg(long)]
    targets: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write KITTI label_2 files.
    #[arg(long)]
    emit_kitti_labels: bool,
}

fn load_config(args: &GenerateArgs) -> Result<JobConfig, PipelineError> {
    let mut cfg = JobConfig::load(&args.config)?;
    if let Some(input) = &args.input {
        cfg.input = input.clone();
    }
    if let Some(labels) = &args.labels {
        cfg.labels = Some(labels.clone());
    }
    if let Some(targets) = &args.targets {
        cfg.targets = TargetSelection::parse(targets)?;
    }
    if let Some(output) = &args.output {
        cfg.output_dir = output.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if args.emit_kitti_labels {
        cfg.emit_kitti_labels = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn generate(args: &GenerateArgs) -> ExitCode {
    let cfg = match load_config(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            error!("thread pool: {e}");
        }
    }
    match run_batch(&cfg) {
        Ok(manifest) => {
            println!(
                "{} frame(s) written, {} failure(s); manifest: {}",
                manifest.successes(),
                manifest.failures(),
                cfg.output_dir.join(MANIFEST_FILE).display()
            );
            if manifest.failures() > 0 {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ PipelineError::Config(_)) => {
            error!("{e}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}

fn inspect(bin: &PathBuf) -> anyhow::Result<()> {
    let cloud = read_kitti_bin(bin).with_context(|| format!("reading {}", bin.display()))?;
    println!("points: {}", cloud.len());
    if let Some((lo, hi)) = cloud.bounds() {
        println!("min: {:.3} {:.3} {:.3}", lo.x, lo.y, lo.z);
        println!("max: {:.3} {:.3} {:.3}", hi.x, hi.y, hi.z);
    }
    Ok(())
}

fn validate(config: &PathBuf) -> ExitCode {
    let checked = JobConfig::load(config).and_then(|cfg| {
        cfg.validate()?;
        discover_frames(&cfg)
    });
    match checked {
        Ok(frames) => {
            println!("config ok: {} input frame(s)", frames.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Inspect { bin } => match inspect(bin) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{e:#}");
                ExitCode::from(EXIT_PARTIAL)
            }
        },
        Command::Validate { config } => validate(config),
    }
}
