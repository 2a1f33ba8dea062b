use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Twist;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate affine: determinant {det:e} of the linear block is too close to zero")]
    DegenerateAffine { det: f64 },

    /// The rotation angle is within 1e-9 of π, where the axis sign is
    /// ambiguous. The carried twist is still a valid logarithm.
    #[error("rotation angle is on the cut locus (θ ≈ π); logarithm has reduced precision")]
    NearCutLocus { approximate: Twist },

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("pyramid too deep: {levels} levels on a {width}x{height} image leaves a coarsest level below {min}x{min}")]
    PyramidTooDeep { levels: usize, width: usize, height: usize, min: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("underdetermined system: {valid} valid pixels, need at least 6")]
    Underdetermined { valid: usize },

    #[error("ill-conditioned Hessian")]
    IllConditioned,

    #[error("no admissible step: every damping proposal produced a non-finite objective")]
    NoAdmissibleStep,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient margin: the warp samples outside the source image")]
    InsufficientMargin,

    #[error("motion too large for scene: only {visible:.1}% of pixels stay in view (need {required:.0}%)")]
    MotionTooLarge { visible: f64, required: f64 },

    /// A generated pair failed its own ground-truth reprojection check.
    #[error("generated pair is inconsistent with its ground truth: mean abs error {mean_abs_error:e} exceeds {tolerance:e}")]
    GroundTruthMismatch { mean_abs_error: f64, tolerance: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{source} (level {level}, iteration {iteration})")]
    AtLevel {
        level: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn at(self, level: usize, iteration: usize) -> Self {
        match self {
            e @ Error::AtLevel { .. } => e,
            e => Error::AtLevel {
                level,
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// Strips any level/iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            e => e,
        }
    }
}
