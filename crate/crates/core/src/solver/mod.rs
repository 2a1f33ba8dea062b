//! The coarse-to-fine inverse compositional solver.
//!
//! [`align`] builds pyramids for both frames, precomputes one
//! steepest-descent image per level, and iterates from the coarsest level
//! to the finest, carrying the estimate forward. The step rule is chosen by
//! [`Method`]: undamped Gauss-Newton, Levenberg-Marquardt with the
//! classic ×10/÷10 λ schedule, or exhaustive selection among log-spaced
//! damping proposals by their true objective.

mod level;
mod steps;

pub use level::{ic_level, IterationRecord, LevelGeometry, LevelProblem, LevelState, StopReason};
pub use steps::{
    gauss_newton_step, lm_adapt, lm_step, propose_dampings, proposal_step, solve_spd, LmDecision,
    ProposalChoice, CONDITION_FLOOR, LAMBDA_MAX, LAMBDA_MIN,
};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_se3, AffineParams, RigidTransform, Twist};
use crate::imaging::{depth_pyramid, ImagePyramid, InverseDepthImage, ScalarImage};
use crate::robust::RobustLoss;
use crate::warp::{steepest_descent_build_count, steepest_descent_image, CameraIntrinsics, Geometry, DEFAULT_OCCLUSION_SLACK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GaussNewton,
    LmHeuristic,
    Proposals,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_newton" | "gn" => Ok(Method::GaussNewton),
            "lm_heuristic" | "lm" => Ok(Method::LmHeuristic),
            "proposals" => Ok(Method::Proposals),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::GaussNewton => "gauss_newton",
            Method::LmHeuristic => "lm_heuristic",
            Method::Proposals => "proposals",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Affine,
    Rigid,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Family::Affine),
            "rigid" => Ok(Family::Rigid),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Affine => "affine",
            Family::Rigid => "rigid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub levels: usize,
    pub iters_per_level: usize,
    pub method: Method,
    pub proposal_count: usize,
    pub lambda_range: (f64, f64),
    pub lm_lambda_init: f64,
    pub lm_factor: f64,
    pub robust: RobustLoss,
    /// Early exit below this step norm; 0 disables it.
    pub min_step_norm: f64,
    /// z-buffer slack in meters for rigid alignment with image depth.
    pub occlusion_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            iters_per_level: 3,
            method: Method::Proposals,
            proposal_count: 10,
            lambda_range: (1e-5, 1e5),
            lm_lambda_init: 1e-3,
            lm_factor: 10.0,
            robust: RobustLoss::default(),
            min_step_norm: 1e-10,
            occlusion_slack: DEFAULT_OCCLUSION_SLACK,
        }
    }
}

impl SolverConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_robust(mut self, robust: RobustLoss) -> Self {
        self.robust = robust;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        let (lo, hi) = self.lambda_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("lambda range ({lo}, {hi}) must satisfy 0 < min < max"));
        }
        if self.method == Method::Proposals && self.proposal_count < 2 {
            return bad(format!("proposal count {} must be at least 2", self.proposal_count));
        }
        if !(self.lm_lambda_init > 0.0 && self.lm_lambda_init.is_finite()) {
            return bad(format!("lm_lambda_init {} must be positive", self.lm_lambda_init));
        }
        if !(self.lm_factor > 1.0 && self.lm_factor.is_finite()) {
            return bad(format!("lm_factor {} must exceed 1", self.lm_factor));
        }
        if !(self.min_step_norm >= 0.0) {
            return bad(format!("min_step_norm {} must be non-negative", self.min_step_norm));
        }
        if !(self.occlusion_slack > 0.0) {
            return bad(format!("occlusion slack {} must be positive", self.occlusion_slack));
        }
        self.robust.validate()
    }

    pub fn dampings(&self) -> Vec<f64> {
        propose_dampings(self.proposal_count, self.lambda_range)
    }
}

/// Current warp parameters of either family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Estimate {
    Affine(AffineParams),
    Rigid(RigidTransform),
}

impl Estimate {
    pub fn identity(family: Family) -> Self {
        match family {
            Family::Affine => Estimate::Affine(AffineParams::identity()),
            Family::Rigid => Estimate::Rigid(RigidTransform::identity()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Estimate::Affine(_) => Family::Affine,
            Estimate::Rigid(_) => Family::Rigid,
        }
    }

    /// The inverse compositional update `ξ ∘ Δξ⁻¹`.
    pub fn apply_increment(&self, delta: &Vector6<f64>) -> Result<Estimate> {
        match self {
            Estimate::Affine(xi) => {
                let inv = AffineParams::from_vector(delta).inverse()?;
                Ok(Estimate::Affine(xi.compose(&inv)))
            }
            Estimate::Rigid(t) => {
                let step = exp_se3(&Twist::from_vector(delta));
                Ok(Estimate::Rigid(t.compose(&step.inverse())))
            }
        }
    }

    pub fn as_affine(&self) -> Option<&AffineParams> {
        match self {
            Estimate::Affine(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_rigid(&self) -> Option<&RigidTransform> {
        match self {
            Estimate::Rigid(t) => Some(t),
            _ => None,
        }
    }

    /// Re-expresses the estimate in the coordinates of the next coarser
    /// pyramid level. Rigid motions are resolution independent.
    pub fn to_coarser(&self) -> Estimate {
        match self {
            Estimate::Affine(a) => Estimate::Affine(affine_to_coarser(a)),
            e => *e,
        }
    }

    pub fn to_finer(&self) -> Estimate {
        match self {
            Estimate::Affine(a) => Estimate::Affine(affine_to_finer(a)),
            e => *e,
        }
    }
}

// Pixel centers map as x_fine = 2·x_coarse + 0.5, so with linear part A the
// translations relate by t_fine = 2·t_coarse + ½(I − A)·(1, 1).
fn half_pixel_offset(a: &AffineParams) -> (f64, f64) {
    let [p1, p2, p3, p4, _, _] = a.0;
    (0.5 * (-p1 - p3), 0.5 * (-p2 - p4))
}

pub fn affine_to_coarser(a: &AffineParams) -> AffineParams {
    let (ox, oy) = half_pixel_offset(a);
    let mut c = *a;
    c.0[4] = (a.0[4] - ox) * 0.5;
    c.0[5] = (a.0[5] - oy) * 0.5;
    c
}

pub fn affine_to_finer(a: &AffineParams) -> AffineParams {
    let (ox, oy) = half_pixel_offset(a);
    let mut f = *a;
    f.0[4] = 2.0 * a.0[4] + ox;
    f.0[5] = 2.0 * a.0[5] + oy;
    f
}

/// A frame to align: intensity plus, for rigid motion, depth and intrinsics.
#[derive(Clone, Debug)]
pub struct Frame {
    pub intensity: ScalarImage,
    pub depth: Option<InverseDepthImage>,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Frame {
    pub fn intensity(intensity: ScalarImage) -> Self {
        Self {
            intensity,
            depth: None,
            intrinsics: None,
        }
    }

    pub fn rgbd(intensity: ScalarImage, depth: InverseDepthImage, intrinsics: CameraIntrinsics) -> Self {
        Self {
            intensity,
            depth: Some(depth),
            intrinsics: Some(intrinsics),
        }
    }
}

/// Trace of one pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    /// Pyramid level, 0 = finest.
    pub level: usize,
    pub width: usize,
    pub height: usize,
    /// How many times the steepest-descent image was built for this level.
    pub steepest_descent_builds: usize,
    /// Template pixels without depth, left out of the Jacobian.
    pub dropped_pixels: usize,
    /// Estimate on entry, in this level's coordinates.
    pub initial: Estimate,
    pub entry_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Final estimate in full-resolution coordinates.
    pub estimate: Estimate,
    /// Per-level traces, coarsest first.
    pub levels: Vec<LevelTrace>,
    pub converged: bool,
    pub reason: StopReason,
    pub final_objective: f64,
}

impl AlignmentResult {
    pub fn iteration_count(&self) -> usize {
        self.levels.iter().map(|l| l.iterations.len()).sum()
    }
}

/// Coarse-to-fine inverse compositional alignment of `image` onto
/// `template`, starting from the identity warp.
pub fn align(template: &Frame, image: &Frame, family: Family, cfg: &SolverConfig) -> Result<AlignmentResult> {
    align_from(template, image, Estimate::identity(family), cfg)
}

/// Like [`align`] but starts from `initial` (full-resolution coordinates).
pub fn align_from(template: &Frame, image: &Frame, initial: Estimate, cfg: &SolverConfig) -> Result<AlignmentResult> {
    cfg.validate()?;
    let family = initial.family();
    if template.intensity.dims() != image.intensity.dims() {
        return Err(Error::InvalidImage(format!(
            "template is {:?} but image is {:?}",
            template.intensity.dims(),
            image.intensity.dims()
        )));
    }

    let template_pyr = ImagePyramid::build(&template.intensity, cfg.levels)?;
    let image_pyr = ImagePyramid::build(&image.intensity, cfg.levels)?;

    let (template_depths, image_depths, intrinsics) = match family {
        Family::Affine => (None, None, None),
        Family::Rigid => {
            let depth = template.depth.as_ref().ok_or_else(|| {
                Error::InvalidConfig("rigid alignment needs template depth".into())
            })?;
            let k = template
                .intrinsics
                .or(image.intrinsics)
                .ok_or_else(|| Error::InvalidConfig("rigid alignment needs intrinsics".into()))?;
            k.validate()?;
            if depth.dims() != template.intensity.dims() {
                return Err(Error::InvalidImage("template depth and intensity differ in size".into()));
            }
            let image_depths = match &image.depth {
                Some(d) if d.dims() != image.intensity.dims() => {
                    return Err(Error::InvalidImage("image depth and intensity differ in size".into()))
                }
                Some(d) => Some(depth_pyramid(d, cfg.levels)?),
                None => None,
            };
            (Some(depth_pyramid(depth, cfg.levels)?), image_depths, Some(k))
        }
    };

    let proposals = cfg.dampings();
    let mut estimate = (0..cfg.levels - 1).fold(initial, |e, _| e.to_coarser());
    let mut traces = Vec::with_capacity(cfg.levels);

    for level in (0..cfg.levels).rev() {
        let t_level = template_pyr.level(level);
        let i_level = image_pyr.level(level);
        let k_level = intrinsics.map(|k| k.at_level(level));

        let geometry = match (&template_depths, k_level.as_ref()) {
            (Some(d), Some(k)) => Geometry::Rigid {
                depth: &d[level],
                intrinsics: k,
            },
            _ => Geometry::Affine,
        };
        let builds_before = steepest_descent_build_count();
        let sd = steepest_descent_image(&t_level.gx, &t_level.gy, &geometry);

        let level_geometry = match (&template_depths, k_level) {
            (Some(d), Some(k)) => LevelGeometry::Rigid {
                template_depth: &d[level],
                image_depth: image_depths.as_ref().map(|v| &v[level]),
                intrinsics: k,
                occlusion_slack: cfg.occlusion_slack,
            },
            _ => LevelGeometry::Affine,
        };
        let problem = LevelProblem {
            template: &t_level.image,
            image: &i_level.image,
            sd: &sd,
            geometry: level_geometry,
        };

        let mut state = LevelState::enter(&problem, estimate, cfg).map_err(|e| e.at(level, 0))?;
        let entry_objective = state.objective;
        let mut records = Vec::with_capacity(cfg.iters_per_level);
        // Each level is a new problem, so the λ schedule restarts.
        let mut lm_lambda = cfg.lm_lambda_init;
        let stop = ic_level(level, &mut state, cfg, &proposals, &mut lm_lambda, &mut records)?;
        let sd_builds = steepest_descent_build_count() - builds_before;

        traces.push(LevelTrace {
            level,
            width: t_level.image.width(),
            height: t_level.image.height(),
            steepest_descent_builds: sd_builds,
            dropped_pixels: sd.dropped,
            initial: estimate,
            entry_objective,
            iterations: records,
            stop,
        });
        estimate = if level > 0 {
            state.estimate.to_finer()
        } else {
            state.estimate
        };
    }

    let last = traces.last().expect("at least one level");
    let final_objective = last
        .iterations
        .last()
        .map_or(last.entry_objective, |r| r.objective);
    let reason = last.stop;
    Ok(AlignmentResult {
        estimate,
        converged: matches!(reason, StopReason::IterationBudget | StopReason::SmallStep)
            && final_objective.is_finite(),
        reason,
        final_objective,
        levels: traces,
    })
}
