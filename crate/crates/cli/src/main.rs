//! `diffsplat` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffsplat::{Modality, SplatPath};

#[derive(Parser, Debug)]
#[command(
    name = "diffsplat",
    version,
    about = "Differentiable point-cloud rendering and multi-view shape/pose fitting"
)]
pub struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = "DIFFSPLAT_THREADS")]
    pub threads: Option<usize>,
    /// Run single-threaded so every reduction happens in a fixed order
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a point cloud from one camera
    Render(RenderArgs),
    /// Render a set of random views of a point cloud
    Synth(SynthArgs),
    /// Fit a point cloud (and optionally poses) to a view set
    Fit(FitArgs),
    /// Compare a fitted cloud and poses against ground truth
    Eval(EvalArgs),
    /// Rigidly align one point cloud onto another with ICP
    Align(AlignArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Time the basic and fast splatting paths
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityArg {
    Sil,
    Depth,
    Color,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Sil => Modality::Silhouette,
            ModalityArg::Depth => Modality::Depth,
            ModalityArg::Color => Modality::Color,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathArg {
    Basic,
    Fast,
}

impl From<PathArg> for SplatPath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Basic => SplatPath::Basic,
            PathArg::Fast => SplatPath::Fast,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraArg {
    Ortho,
    Persp,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Input point cloud (ASCII PLY)
    #[arg(long)]
    pub cloud: PathBuf,
    /// Camera JSON
    #[arg(long)]
    pub camera: PathBuf,
    /// Grid resolution per axis
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Image type to produce
    #[arg(long, value_enum, default_value_t = ModalityArg::Sil)]
    pub modality: ModalityArg,
    /// Splatting implementation
    #[arg(long, value_enum, default_value_t = PathArg::Basic)]
    pub path: PathArg,
    /// Width used for points without a sigma property
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    /// Output image (.png or .pfm)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Source point cloud (ASCII PLY)
    #[arg(long)]
    pub cloud: PathBuf,
    /// Number of views
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Elevation range in degrees, as `lo,hi`
    #[arg(long, default_value = "-20,40", allow_hyphen_values = true)]
    pub elev_range: String,
    /// Azimuth range in degrees, as `lo,hi`
    #[arg(long, default_value = "0,360", allow_hyphen_values = true)]
    pub azim_range: String,
    /// Grid resolution per axis; images are grid x grid
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Image type to produce
    #[arg(long, value_enum, default_value_t = ModalityArg::Sil)]
    pub modality: ModalityArg,
    /// Splatting implementation
    #[arg(long, value_enum, default_value_t = PathArg::Basic)]
    pub path: PathArg,
    /// Camera model
    #[arg(long, value_enum, default_value_t = CameraArg::Ortho)]
    pub camera: CameraArg,
    /// Camera distance from the origin for perspective views
    #[arg(long, default_value_t = 2.0)]
    pub distance: f64,
    /// Width used for points without a sigma property
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// View directory written by `synth`
    #[arg(long)]
    pub views: PathBuf,
    /// Fit config JSON [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the recorded camera poses instead of estimating them
    #[arg(long)]
    pub supervised: bool,
    /// Override the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config step count
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override the config candidate count
    #[arg(long = "K", value_name = "K")]
    pub k: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Fitted point cloud
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth point cloud
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory with fitted `pose_NNN.json` files
    #[arg(long, requires = "gt_views")]
    pub pred_poses: Option<PathBuf>,
    /// View directory with the ground-truth cameras
    #[arg(long, requires = "pred_poses")]
    pub gt_views: Option<PathBuf>,
    /// Align the fitted cloud onto the ground truth first (for pose-free fits)
    #[arg(long)]
    pub align: bool,
    /// Also try the depth-mirrored fit when aligning
    #[arg(long, requires = "align")]
    pub mirror: bool,
    /// Metrics JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Cloud to move
    #[arg(long)]
    pub src: PathBuf,
    /// Cloud to align onto
    #[arg(long)]
    pub dst: PathBuf,
    /// Estimate a uniform scale as well
    #[arg(long, conflicts_with = "mirror")]
    pub scale: bool,
    /// Also try the depth-mirrored source
    #[arg(long)]
    pub mirror: bool,
    /// ICP iteration limit per start
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    /// Stop when the rms improves by less than this
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Transform JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Image type to produce
    #[arg(long, value_enum, default_value_t = ModalityArg::Sil)]
    pub modality: ModalityArg,
    /// Splatting implementation
    #[arg(long, value_enum, default_value_t = PathArg::Basic)]
    pub path: PathArg,
    /// Camera model
    #[arg(long, value_enum, default_value_t = CameraArg::Ortho)]
    pub camera: CameraArg,
    /// Number of random instances
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Points per instance
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    /// Grid resolution per axis
    #[arg(long, default_value_t = 16)]
    pub grid: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Report JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Paths to time
    #[arg(long, value_enum, value_delimiter = ',', default_value = "basic,fast")]
    pub path: Vec<PathArg>,
    /// Point counts, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
    pub n: Vec<usize>,
    /// Grid resolution per axis
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// Timed repetitions; the fastest is reported
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
