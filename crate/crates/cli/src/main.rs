//! `thermosplat` command-line tool: synthetic data, training, rendering,
//! evaluation and gradient checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECK: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "thermosplat", version, about = "RGB + thermal Gaussian splatting")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablate {
    Film,
    Decouple,
    Hybrid,
    FeaRgb,
    FeaTh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Standard,
    Decoupling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Test,
    Train,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its ground-truth checkpoint.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        gaussians: usize,
        #[arg(long, default_value_t = 24)]
        cameras: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, value_enum, default_value_t = SceneKind::Standard)]
        kind: SceneKind,
    },
    /// Optimize a scene.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ablation variant; may be repeated.
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eval_every: Option<usize>,
        /// Ground-truth checkpoint; switches initialization to `perturb_gt`.
        #[arg(long)]
        init_gt: Option<PathBuf>,
    },
    /// Render one view of a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// Frame index into the dataset given by `--data`.
        #[arg(long, conflicts_with = "pose", requires = "data")]
        camera_index: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Camera as JSON (inline or a file path): `transform_matrix`
        /// (OpenGL camera-to-world), `w`, `h`, and `fl_x` or `camera_angle_x`.
        #[arg(long, required_unless_present = "camera_index")]
        pose: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-view and mean PSNR/SSIM of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file; both `.csv` and `.json` versions are written.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Single seed; the default checks seeds 0, 1 and 2.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "all")]
        module: String,
        /// Negate the analytic gradient of one parameter class.
        #[arg(long)]
        inject_sign_flip: Option<String>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
