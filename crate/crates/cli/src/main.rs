//! `akd`: phantom generation, masks, forward attenuation, training,
//! reconstruction, baselines and metrics over tensor containers.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use akd_core::MaskKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "akd", version, about = "Attenuated k-space diffusion for multi-coil MRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-coil phantom.
    Phantom(PhantomArgs),
    /// Generate a line sampling mask.
    Mask(MaskArgs),
    /// Attenuate (and optionally perturb) k-space along the schedule.
    Forward(ForwardArgs),
    /// Fit a linear per-frequency denoiser by score matching.
    Train(TrainArgs),
    /// Predictor-corrector reconstruction of undersampled k-space.
    Reconstruct(ReconstructArgs),
    /// Classical reference reconstructions.
    Baseline(BaselineArgs),
    /// Compare two images (or k-spaces) and print NMSE, PSNR and SSIM as JSON.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    pub ky: usize,
    #[arg(long, default_value_t = 64)]
    pub kx: usize,
    #[arg(long, default_value_t = 4)]
    pub nc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving truth, sensitivity and k-space containers.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MaskKindArg {
    Uniform,
    Random,
    AcsOnly,
}

impl From<MaskKindArg> for MaskKind {
    fn from(k: MaskKindArg) -> Self {
        match k {
            MaskKindArg::Uniform => MaskKind::Uniform,
            MaskKindArg::Random => MaskKind::Random,
            MaskKindArg::AcsOnly => MaskKind::AcsOnly,
        }
    }
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[arg(long, value_enum, default_value_t = MaskKindArg::Uniform)]
    pub kind: MaskKindArg,
    #[arg(long, default_value_t = 64)]
    pub ky: usize,
    #[arg(long, default_value_t = 64)]
    pub kx: usize,
    /// Acceleration factor.
    #[arg(long = "accel", short = 'R', default_value_t = 6)]
    pub r: usize,
    #[arg(long, default_value_t = 16)]
    pub acs_lines: usize,
    /// Calibration band extent for `acs-only` masks.
    #[arg(long, default_value_t = 32)]
    pub acs_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ForwardArgs {
    #[arg(long)]
    pub kspace: PathBuf,
    #[arg(long)]
    pub sens: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Emit every `every`-th step from 0 to N.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    /// Add perturbation-kernel noise to each attenuated state.
    #[arg(long)]
    pub perturb: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Fully sampled training k-spaces (repeatable).
    #[arg(long, required = true)]
    pub kspace: Vec<PathBuf>,
    #[arg(long)]
    pub sens: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Use one noise draw per update instead of the exact noise expectation.
    #[arg(long)]
    pub single_draw: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Delta,
    Gaussian,
    Linear,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// K-space slices to reconstruct (repeatable); zero-filled by the mask on load.
    #[arg(long, required = true)]
    pub kspace: Vec<PathBuf>,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub sens: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Delta)]
    pub model: ModelArg,
    /// Fully sampled reference for the oracle models (one per slice).
    #[arg(long)]
    pub truth: Vec<PathBuf>,
    /// Trained gains for `--model linear`.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Parallel slices; capped by the AKD_THREADS environment variable.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Store every fifth iterate as PNG.
    #[arg(long)]
    pub trajectory: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineMethod {
    Pm,
    GrappaOp,
    ZeroFilled,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub kspace: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub sens: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            output::report_error("usage", &e.kind().to_string(), &e.to_string());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            output::report_error(e.category(), "", &e.to_string());
            ExitCode::FAILURE
        }
    }
}
