//! Evaluation metrics for both warp families.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{log_so3, AffineParams, RigidTransform};
use crate::imaging::InverseDepthImage;
use crate::warp::CameraIntrinsics;

/// Relative pose error: axis-angle rotation magnitude and translation norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Degrees.
    pub rotation_deg: f64,
    /// Centimeters.
    pub translation_cm: f64,
}

/// Back-projects every template pixel with valid depth, giving the point
/// set used by [`epe3d`].
pub fn depth_points(depth: &InverseDepthImage, k: &CameraIntrinsics) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if depth.is_valid(x, y) {
                out.push(k.back_project(x as f64, y as f64, depth.get(x, y)));
            }
        }
    }
    out
}

/// Mean distance between `T_gt·p` and `T_est·p` in centimeters, for points
/// given in meters.
pub fn epe3d(points: &[Vector3<f64>], est: &RigidTransform, gt: &RigidTransform) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("point set"));
    }
    let sum: f64 = points
        .iter()
        .map(|p| (gt.transform_point(p) - est.transform_point(p)).norm())
        .sum();
    Ok(100.0 * sum / points.len() as f64)
}

/// Error of `E = T_gt⁻¹·T_est`.
pub fn relative_pose_error(est: &RigidTransform, gt: &RigidTransform) -> PoseError {
    let e = gt.inverse().compose(est);
    let (omega, _) = log_so3(&e.rotation);
    PoseError {
        rotation_deg: omega.norm().to_degrees(),
        translation_cm: 100.0 * e.translation.norm(),
    }
}

/// Fraction of entries whose rotation and translation errors are both
/// strictly below the thresholds.
pub fn success_ratio(errors: &[PoseError], rot_thresh_deg: f64, trans_thresh_cm: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("pose error list"));
    }
    if !(rot_thresh_deg > 0.0 && trans_thresh_cm > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "success thresholds must be positive, got {rot_thresh_deg}° / {trans_thresh_cm} cm"
        )));
    }
    let hits = errors
        .iter()
        .filter(|e| e.rotation_deg < rot_thresh_deg && e.translation_cm < trans_thresh_cm)
        .count();
    Ok(hits as f64 / errors.len() as f64)
}

/// `Σ|est_i − gt_i|` over the six parameters.
pub fn affine_l1(est: &AffineParams, gt: &AffineParams) -> f64 {
    est.0.iter().zip(&gt.0).map(|(a, b)| (a - b).abs()).sum()
}
