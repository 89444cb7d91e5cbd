use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use nightguide::bilateral::BilateralParams;
use nightguide::commands::{cmd_curve, cmd_evaluate, cmd_match, cmd_refine, RefineCommand};
use nightguide::fusion::FusionParams;
use nightguide::geometry::RansacParams;
use nightguide::refine::{AlignmentMode, BilateralImpl, RefineConfig};
use nightguide::types::{ClassCatalog, DEFAULT_MAX_DEPTH};
use nightguide::uiou::DEFAULT_GRID_SIZE;

#[derive(Parser, Debug)]
#[command(name = "nightguide", version, about = "Refine nighttime segmentation pseudo-labels and score predictions with UIoU")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "NIGHTGUIDE_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pair every dark record with the GPS-nearest daytime record.
    Match {
        dark_manifest: PathBuf,
        day_manifest: PathBuf,
        #[arg(short, long, default_value = "correspondences.csv")]
        out: PathBuf,
    },
    /// Refine the dark predictions of a correspondence table.
    Refine(RefineArgs),
    /// Score predictions at one confidence threshold.
    Evaluate {
        pred_manifest: PathBuf,
        gt_manifest: PathBuf,
        /// Confidence threshold; defaults to 1/C.
        #[arg(long)]
        theta: Option<f64>,
        /// Also write the table as CSV.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score predictions over a grid of thresholds from 1/C to 1.
    Curve {
        pred_manifest: PathBuf,
        gt_manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid_size: usize,
        #[arg(short, long, default_value = "uiou_curve.csv")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RefineArgs {
    correspondences: PathBuf,
    dark_manifest: PathBuf,
    day_manifest: PathBuf,
    #[arg(short, long, default_value = "refined")]
    out_dir: PathBuf,
    /// Directory holding `<dark_id>.txt` match files.
    #[arg(long)]
    matches_dir: Option<PathBuf>,
    /// bilateral, warp or warp_with_fallback.
    #[arg(long, default_value = "warp_with_fallback")]
    mode: AlignmentMode,
    /// Evaluate the bilateral filter directly instead of on the grid.
    #[arg(long)]
    direct_bilateral: bool,
    #[arg(long, default_value_t = 80.0)]
    sigma_s: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0.3)]
    alpha_low: f64,
    #[arg(long, default_value_t = 0.6)]
    alpha_high: f64,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 14)]
    min_inliers: usize,
    #[arg(long, default_value_t = 1000)]
    ransac_iterations: usize,
    /// Sampson distance threshold in pixels.
    #[arg(long, default_value_t = 2.0)]
    ransac_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depth ceiling in meters. Sky pixels are set to it before warping;
    /// depth maps with larger values are rejected.
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: f64,
}

impl RefineArgs {
    fn into_command(self) -> anyhow::Result<RefineCommand> {
        let config = RefineConfig {
            mode: self.mode,
            min_inliers: self.min_inliers,
            bilateral: BilateralParams::new(self.sigma_s, self.sigma_r)?,
            bilateral_impl: if self.direct_bilateral {
                BilateralImpl::Direct
            } else {
                BilateralImpl::Grid
            },
            fusion: FusionParams::new(self.alpha_low, self.alpha_high, self.eta)?,
            ransac: RansacParams {
                iterations: self.ransac_iterations,
                threshold: self.ransac_threshold,
                seed: self.seed,
            },
            ..Default::default()
        };
        config.validate()?;
        Ok(RefineCommand {
            correspondences: self.correspondences,
            dark_manifest: self.dark_manifest,
            day_manifest: self.day_manifest,
            out_dir: self.out_dir,
            matches_dir: self.matches_dir,
            config,
            max_depth: self.max_depth,
        })
    }
}

fn report_failures(failures: &[(String, String)]) -> usize {
    for (id, msg) in failures {
        error!("{id}: {msg}");
    }
    failures.len()
}

fn run(cli: Cli) -> anyhow::Result<usize> {
    if let Some(n) = cli.workers {
        anyhow::ensure!(n > 0, "worker count must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let catalog = ClassCatalog::cityscapes();
    match cli.command {
        Command::Match {
            dark_manifest,
            day_manifest,
            out,
        } => {
            let t = cmd_match(&dark_manifest, &day_manifest, &out)?;
            println!("{} correspondences written to {}", t.entries.len(), out.display());
            Ok(0)
        }
        Command::Refine(args) => {
            let cmd = args.into_command()?;
            let summary = cmd_refine(&cmd, &catalog)?;
            let warped = summary.rows.iter().filter(|r| r.mode == "warp").count();
            println!(
                "{} pairs refined ({warped} warped), {} failed; report in {}",
                summary.rows.len() - summary.failures,
                summary.failures,
                cmd.out_dir.join("report.csv").display()
            );
            Ok(summary.failures)
        }
        Command::Evaluate {
            pred_manifest,
            gt_manifest,
            theta,
            out,
        } => {
            let s = cmd_evaluate(&pred_manifest, &gt_manifest, theta, &catalog, out.as_deref())?;
            s.write_csv(catalog.names(), std::io::stdout().lock())?;
            info!("evaluated at theta = {}", s.theta);
            Ok(report_failures(&s.failures))
        }
        Command::Curve {
            pred_manifest,
            gt_manifest,
            grid_size,
            out,
        } => {
            let s = cmd_curve(&pred_manifest, &gt_manifest, grid_size, &catalog, &out)?;
            match s.curve.best() {
                Some((theta, mean)) => println!("best theta {theta} with mean UIoU {mean:.6}"),
                None => println!("no scored thresholds"),
            }
            println!("curve written to {}", out.display());
            Ok(report_failures(&s.failures))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            error!("{n} item(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
