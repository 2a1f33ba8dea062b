//! One pyramid level of the inverse compositional loop.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::steps::{gauss_newton_step, lm_adapt, lm_step, proposal_step};
use super::{Estimate, Method, SolverConfig};
use crate::error::{Error, Result};
use crate::imaging::{InverseDepthImage, ScalarImage};
use crate::robust::{compute_weights, weighted_normal_equations, ResidualField, WeightField};
use crate::warp::{is_visible, warp_rigid, CameraIntrinsics, SteepestDescentImage};

/// Why a level stopped iterating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// All `K` iterations ran.
    IterationBudget,
    /// The step norm fell below `min_step_norm`.
    SmallStep,
    /// A step was rejected with λ at its ceiling.
    DampingCeiling,
    /// Fewer than six pixels would remain valid.
    TooFewPixels,
    /// The step produced a non-invertible warp.
    DegenerateStep,
}

/// One inner iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Damping of the applied step; `None` for an undamped Gauss-Newton step.
    pub lambda: Option<f64>,
    /// Objective after the iteration.
    pub objective: f64,
    pub step_norm: f64,
    /// The increment Δξ (before inversion and composition).
    pub step: [f64; 6],
    pub valid_pixels: usize,
    pub accepted: bool,
    /// Trial steps rejected by the λ schedule during this iteration.
    pub rejected_trials: usize,
}

/// Geometry-specific part of a level.
#[derive(Clone, Copy, Debug)]
pub enum LevelGeometry<'a> {
    Affine,
    Rigid {
        template_depth: &'a InverseDepthImage,
        /// Enables z-buffer occlusion when present.
        image_depth: Option<&'a InverseDepthImage>,
        intrinsics: CameraIntrinsics,
        occlusion_slack: f64,
    },
}

/// Everything needed to iterate at one pyramid level. The steepest-descent
/// image is built once by the caller and reused by every iteration.
#[derive(Clone, Copy, Debug)]
pub struct LevelProblem<'a> {
    pub template: &'a ScalarImage,
    pub image: &'a ScalarImage,
    pub sd: &'a SteepestDescentImage,
    pub geometry: LevelGeometry<'a>,
}

impl LevelProblem<'_> {
    /// Residuals `I(W(u; ξ)) − T(u)` for every Jacobian row. Rows outside
    /// `mask` (when given) are reported invalid.
    pub fn residuals(&self, estimate: &Estimate, mask: Option<&[bool]>) -> ResidualField {
        let n = self.sd.len();
        let mut values = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        let bounds = self.image.dims();
        for row in 0..n {
            if mask.is_some_and(|m| !m[row]) {
                values.push(0.0);
                valid.push(false);
                continue;
            }
            let (x, y) = self.sd.pixel_coords(row);
            let t = self.template.get(x, y);
            let sample = match (estimate, &self.geometry) {
                (Estimate::Affine(xi), LevelGeometry::Affine) => {
                    let (wx, wy) = xi.apply(x as f64, y as f64);
                    self.image.bilinear_sample(wx, wy)
                }
                (
                    Estimate::Rigid(pose),
                    LevelGeometry::Rigid {
                        template_depth,
                        image_depth,
                        intrinsics,
                        occlusion_slack,
                    },
                ) => {
                    let d = template_depth.get(x, y);
                    let w = warp_rigid(x as f64, y as f64, d, intrinsics, pose, bounds);
                    let visible = match image_depth {
                        Some(depth) => is_visible(&w, depth, *occlusion_slack),
                        None => w.valid,
                    };
                    if visible {
                        self.image.bilinear_sample(w.x, w.y)
                    } else {
                        crate::imaging::Sample { value: 0.0, valid: false }
                    }
                }
                _ => panic!("estimate family does not match the level geometry"),
            };
            if sample.valid {
                values.push(sample.value - t);
                valid.push(true);
            } else {
                values.push(0.0);
                valid.push(false);
            }
        }
        ResidualField { values, valid }
    }
}

/// Frozen weights plus the current estimate of one level.
pub struct LevelState<'p, 'a> {
    problem: &'p LevelProblem<'a>,
    mask: Vec<bool>,
    weights: WeightField,
    pub estimate: Estimate,
    pub residuals: ResidualField,
    pub objective: f64,
}

impl<'p, 'a> LevelState<'p, 'a> {
    /// Evaluates the entry residual and freezes the robust weights for the
    /// whole level. Rows invalid at entry stay excluded.
    pub fn enter(problem: &'p LevelProblem<'a>, estimate: Estimate, cfg: &SolverConfig) -> Result<Self> {
        let residuals = problem.residuals(&estimate, None);
        let valid = residuals.valid_count();
        if valid < 6 {
            return Err(Error::Underdetermined { valid });
        }
        let weights = compute_weights(&residuals, &cfg.robust);
        let objective = residuals.objective(&weights);
        Ok(Self {
            problem,
            mask: residuals.valid.clone(),
            weights,
            estimate,
            residuals,
            objective,
        })
    }

    pub fn weights(&self) -> &WeightField {
        &self.weights
    }

    /// Residuals and objective of a candidate estimate; the objective is
    /// `+∞` when fewer than six rows stay valid.
    pub fn evaluate(&self, estimate: &Estimate) -> (ResidualField, f64) {
        let r = self.problem.residuals(estimate, Some(&self.mask));
        let obj = if r.valid_count() < 6 {
            f64::INFINITY
        } else {
            r.objective(&self.weights)
        };
        (r, obj)
    }

    /// Objective of `ξ ∘ Δξ⁻¹`, or `+∞` if the update is degenerate.
    pub fn trial_objective(&self, delta: &Vector6<f64>) -> f64 {
        match self.estimate.apply_increment(delta) {
            Ok(next) => self.evaluate(&next).1,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Runs up to `K` inverse compositional iterations on one level.
///
/// Each iteration solves the weighted normal equations of the current
/// residual against the fixed steepest-descent image and updates
/// `ξ ← ξ ∘ Δξ⁻¹` according to `cfg.method`.
pub fn ic_level(
    level: usize,
    state: &mut LevelState,
    cfg: &SolverConfig,
    proposals: &[f64],
    lm_lambda: &mut f64,
    records: &mut Vec<IterationRecord>,
) -> Result<StopReason> {
    let sd = state.problem.sd;
    for k in 0..cfg.iters_per_level {
        let ne = match weighted_normal_equations(sd, &state.weights, &state.residuals) {
            Ok(ne) => ne,
            Err(Error::Underdetermined { .. }) => return Ok(StopReason::TooFewPixels),
            Err(e) => return Err(e.at(level, k)),
        };
        let (h, g) = (ne.hessian, ne.gradient);

        let (delta, lambda, rejected, accepted) = match cfg.method {
            Method::GaussNewton => match gauss_newton_step(&h, &g) {
                Ok(d) => (d, None, 0, true),
                Err(Error::IllConditioned) => {
                    let d = lm_step(&h, &g, cfg.lm_lambda_init).map_err(|e| e.at(level, k))?;
                    (d, Some(cfg.lm_lambda_init), 0, true)
                }
                Err(e) => return Err(e.at(level, k)),
            },
            Method::Proposals => {
                let choice = proposal_step(&h, &g, proposals, |d| state.trial_objective(d))
                    .map_err(|e| e.at(level, k))?;
                (choice.delta, Some(choice.lambda), 0, true)
            }
            Method::LmHeuristic => {
                let mut rejected = 0;
                loop {
                    let lambda = *lm_lambda;
                    let delta = match lm_step(&h, &g, lambda) {
                        Ok(d) => Some(d),
                        Err(Error::IllConditioned) => None,
                        Err(e) => return Err(e.at(level, k)),
                    };
                    let after = delta.map_or(f64::INFINITY, |d| state.trial_objective(&d));
                    let decision = lm_adapt(lambda, cfg.lm_factor, state.objective, after);
                    *lm_lambda = decision.lambda;
                    if decision.accept {
                        break (delta.unwrap(), Some(lambda), rejected, true);
                    }
                    rejected += 1;
                    if decision.exhausted {
                        break (Vector6::zeros(), Some(lambda), rejected, false);
                    }
                }
            }
        };

        if !accepted {
            records.push(IterationRecord {
                iteration: k,
                lambda,
                objective: state.objective,
                step_norm: 0.0,
                step: [0.0; 6],
                valid_pixels: state.residuals.valid_count(),
                accepted: false,
                rejected_trials: rejected,
            });
            return Ok(StopReason::DampingCeiling);
        }

        // Proposals and the λ schedule only pick finite trial objectives, so
        // these exits are reachable from Gauss-Newton steps alone.
        let next = match state.estimate.apply_increment(&delta) {
            Ok(next) => next,
            Err(Error::DegenerateAffine { .. }) => return Ok(StopReason::DegenerateStep),
            Err(e) => return Err(e.at(level, k)),
        };
        let (residuals, objective) = state.evaluate(&next);
        if !objective.is_finite() {
            return Ok(StopReason::TooFewPixels);
        }
        let step_norm = delta.norm();
        state.estimate = next;
        state.objective = objective;
        state.residuals = residuals;
        records.push(IterationRecord {
            iteration: k,
            lambda,
            objective,
            step_norm,
            step: [delta[0], delta[1], delta[2], delta[3], delta[4], delta[5]],
            valid_pixels: state.residuals.valid_count(),
            accepted: true,
            rejected_trials: rejected,
        });
        if step_norm < cfg.min_step_norm {
            return Ok(StopReason::SmallStep);
        }
    }
    Ok(StopReason::IterationBudget)
}
