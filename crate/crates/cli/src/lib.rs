//! Command-line harness: scene generation, two-stage reconstruction, the
//! ablation matrix, and mesh evaluation.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
//! runtime and numeric failures. Failures print one `error: ...` line to
//! stderr.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsefuse::bandit::BanditError;
use sparsefuse::consensus::ConsensusError;
use sparsefuse::enhancer::EnhanceError;
use sparsefuse::image::ImageError;
use sparsefuse::recon::ReconError;
use sparsefuse::scene::SceneError;
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("missing asset {path}: {reason}")]
    MissingAsset { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparsefuse", version, about = "Sparse-view reconstruction harness on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file; without it every key takes its default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, also where `reconstruct` finds the scene assets.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vs {
    Ucb,
    Random,
    Sequential,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fusion {
    Ours,
    MaxPixel,
    MinPixel,
    MaxImage,
    MinImage,
    NoIqr,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render ground-truth sparse and held-out views.
    Scene(Common),
    /// Run both stages on the scene assets and extract a mesh.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Stop after stage 1 and mesh its density grid.
        #[arg(long)]
        skip_stage2: bool,
        /// Viewpoint selection strategy; `off` disables enhancement.
        #[arg(long)]
        vs: Option<Vs>,
        /// Image fusion; `off` uses a single enhancer sample.
        #[arg(long = "if")]
        image_fusion: Option<Toggle>,
        #[arg(long)]
        fusion: Option<Fusion>,
    },
    /// Run the ablation matrix and write its tables.
    Ablate(Common),
    /// Score a mesh against the configured scene.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Mesh to score; defaults to `<out>/mesh.obj`.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn load_config(
    common: &Common,
    overrides: &[(&str, Option<String>)],
) -> Result<RunConfig, CliError> {
    let mut pairs = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
            config::parse_pairs(&text)?
        }
        None => Default::default(),
    };
    if let Some(seed) = common.seed {
        pairs.insert("seed".into(), seed.to_string());
    }
    for (key, value) in overrides {
        if let Some(v) = value {
            pairs.insert(key.to_string(), v.clone());
        }
    }
    Ok(RunConfig::from_pairs(pairs)?)
}

fn metrics_line(m: &pipeline::RunMetrics) -> String {
    format!(
        "psnr={:.4} ssim={:.4} perceptual_proxy={:.4} chamfer={:.6}",
        m.image.psnr, m.image.ssim, m.image.perceptual_proxy, m.chamfer
    )
}

/// Executes a parsed command and returns the summary printed on success.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Scene(common) => {
            let cfg = load_config(&common, &[])?;
            let s = commands::cmd_scene(&cfg, &common.out)?;
            Ok(format!("wrote {} files to {}", s.files.len(), common.out.display()))
        }
        Command::Reconstruct {
            common,
            skip_stage2,
            vs,
            image_fusion,
            fusion,
        } => {
            let cfg = load_config(
                &common,
                &[
                    ("bandit.strategy", vs.map(value_name)),
                    ("fusion.enabled", image_fusion.map(|t| (t == Toggle::On).to_string())),
                    ("fusion.strategy", fusion.map(value_name)),
                ],
            )?;
            let m = commands::cmd_reconstruct(&cfg, &common.out, skip_stage2)?;
            Ok(metrics_line(&m))
        }
        Command::Ablate(common) => {
            let cfg = load_config(&common, &[])?;
            let report = commands::cmd_ablate(&cfg, &common.out)?;
            Ok(report.markdown)
        }
        Command::Evaluate { common, mesh } => {
            let cfg = load_config(&common, &[])?;
            let mesh = mesh.unwrap_or_else(|| common.out.join("mesh.obj"));
            let m = commands::cmd_evaluate(&cfg, Path::new(&mesh), &common.out)?;
            Ok(metrics_line(&m))
        }
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let reason = e.to_string();
            let first = reason.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: ").trim());
            return 1;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
