use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ic_align::robust::RobustLoss;
use ic_align::solver::{Family, Method, SolverConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "ic-align", version, about = "Inverse compositional dense image alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Align one image pair and report the estimate.
    Align(AlignArgs),
    /// Generate seeded synthetic pairs with ground truth.
    Gen(GenArgs),
    /// Align every pair of a manifest and summarize the errors.
    Eval(EvalArgs),
    /// Run built-in Jacobian, group-law and solver checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct SolverFlags {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub iters_per_level: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub proposal_count: Option<usize>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lm_lambda_init: Option<f64>,
    #[arg(long)]
    pub lm_factor: Option<f64>,
    #[arg(long, value_enum)]
    pub robust: Option<RobustKind>,
    /// Huber δ or Tukey c, in normalized intensity units.
    #[arg(long)]
    pub robust_scale: Option<f64>,
    #[arg(long)]
    pub min_step_norm: Option<f64>,
    /// z-buffer slack in meters.
    #[arg(long)]
    pub occlusion_slack: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RobustKind {
    None,
    Huber,
    Tukey,
}

/// Scale used when `--robust` is given without `--robust-scale`.
fn default_loss(kind: RobustKind) -> RobustLoss {
    match kind {
        RobustKind::None => RobustLoss::None,
        RobustKind::Huber => RobustLoss::Huber { delta: 0.1 },
        RobustKind::Tukey => RobustLoss::Tukey { c: 0.3 },
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Option<Family>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub depth_scale: Option<f64>,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

impl SolverFlags {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, base: &SolverConfig) -> Result<SolverConfig, CliError> {
        let mut c = *base;
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        take!(levels, iters_per_level, method, proposal_count, lm_lambda_init, lm_factor, min_step_norm, occlusion_slack);
        if let Some(v) = self.lambda_min {
            c.lambda_range.0 = v;
        }
        if let Some(v) = self.lambda_max {
            c.lambda_range.1 = v;
        }
        if let Some(kind) = self.robust {
            c.robust = default_loss(kind);
        }
        if let Some(s) = self.robust_scale {
            c.robust = match c.robust {
                RobustLoss::None => {
                    return Err(CliError::Usage("--robust-scale needs a huber or tukey loss".into()));
                }
                RobustLoss::Huber { .. } => RobustLoss::Huber { delta: s },
                RobustLoss::Tukey { .. } => RobustLoss::Tukey { c: s },
            };
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long, value_name = "PATH")]
    pub template: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    /// 16-bit depth PNG of the template (rigid only).
    #[arg(long, value_name = "PATH")]
    pub template_depth: Option<PathBuf>,
    /// 16-bit depth PNG of the image; enables z-buffer occlusion.
    #[arg(long, value_name = "PATH")]
    pub image_depth: Option<PathBuf>,
    /// Text file with `fx fy cx cy` (rigid only).
    #[arg(long, value_name = "PATH")]
    pub intrinsics: Option<PathBuf>,
    /// Raw depth units per meter.
    #[arg(long)]
    pub depth_scale: Option<f64>,
    /// Where to write the JSON report.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Write template, warped image and residual PNGs into this directory.
    #[arg(long, value_name = "DIR")]
    pub dump_debug_images: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Affine,
    Rigid,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Affine => Family::Affine,
            FamilyArg::Rigid => Family::Rigid,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for images and `manifest.json`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Source image for affine pairs instead of a procedural texture.
    #[arg(long, value_name = "PATH")]
    pub source: Option<PathBuf>,
    /// Standard deviation of additive Gaussian intensity noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// TOML run configuration providing family, seed and count.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Per-pair CSV output; defaults to `eval.csv` next to the manifest.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
