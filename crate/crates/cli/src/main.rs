//! `gradreg` command-line tool.
//!
//! Exit codes: 0 on success, 1 for invalid input or I/O problems, 2 when the
//! numerics fail (divergence, failed gradient check).

mod commands;
mod display;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gradreg", version, about = "Symmetric deformable registration of 3D volumes")]
pub struct Cli {
    /// Worker threads for batch registration (pairs run concurrently)
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    /// Only report errors
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving volume onto a fixed one (or every pair in a directory)
    Register(RegisterArgs),
    /// Resample an image (trilinear) or label map (nearest) through a field
    Warp(WarpArgs),
    /// Write the Jacobian determinant map of a field
    Jacobian(JacobianArgs),
    /// Dice / HD95 / SdLogJ report for a warped label map
    Metrics(MetricsArgs),
    /// Generate a synthetic labelled pair with a known deformation
    Phantom(PhantomArgs),
    /// Compare analytic gradients with finite differences on a random problem
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fixed (target) image
    #[arg(long, required_unless_present = "batch_dir", conflicts_with = "batch_dir")]
    pub fixed: Option<PathBuf>,
    /// Moving image, warped onto the fixed one
    #[arg(long, required_unless_present = "batch_dir", conflicts_with = "batch_dir")]
    pub moving: Option<PathBuf>,
    /// Label map of the fixed image
    #[arg(long, requires = "moving_labels", conflicts_with = "batch_dir")]
    pub fixed_labels: Option<PathBuf>,
    /// Label map of the moving image
    #[arg(long, requires = "fixed_labels", conflicts_with = "batch_dir")]
    pub moving_labels: Option<PathBuf>,
    /// Directory of pair subdirectories, each holding fixed, moving and
    /// optionally fixed_labels and moving_labels volumes
    #[arg(long)]
    pub batch_dir: Option<PathBuf>,
    /// Registration config (JSON); defaults apply to missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Map CT intensities through the abdomen, lung and bone windows first
    #[arg(long)]
    pub ct_windows: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long, required_unless_present = "labels", conflicts_with = "labels")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Deformation field (3-channel volume of sample coordinates)
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JacobianArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also print the standard deviation of the log determinant
    #[arg(long)]
    pub sdlogj: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub fixed_labels: PathBuf,
    #[arg(long)]
    pub warped_labels: PathBuf,
    /// Field that produced the warped labels (for SdLogJ)
    #[arg(long)]
    pub field: PathBuf,
    /// Comma-separated label ids; defaults to every foreground label present
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<u16>>,
    /// Row identifier in the report
    #[arg(long, default_value = "pair")]
    pub pair_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec (JSON); without it a built-in abdominal layout is used
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Edge length of the built-in layout
    #[arg(long, default_value_t = 48, conflicts_with = "spec")]
    pub size: usize,
    /// Noise seed of the built-in layout
    #[arg(long, default_value_t = 0, conflicts_with = "spec")]
    pub seed: u64,
    /// Ground-truth warp: a JSON file or inline JSON such as
    /// '{"kind":"sinusoidal","amplitude":3,"wavelength":24}'
    #[arg(long)]
    pub warp: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Problem size: one edge length or nx,ny,nz (at most 8 each)
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::failure_code(&e))
        }
    }
}
