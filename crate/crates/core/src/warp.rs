//! Pixel warps for both motion families, z-buffer occlusion, and the
//! analytic warp Jacobians that make up the steepest-descent image.

use nalgebra::{Matrix2x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineParams, RigidTransform};
use crate::imaging::{InverseDepthImage, ScalarImage, MAX_INVERSE_DEPTH};

thread_local! {
    static SD_BUILDS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of [`steepest_descent_image`] calls made so far on this thread.
pub fn steepest_descent_build_count() -> usize {
    SD_BUILDS.with(|c| c.get())
}

/// Warped points closer to the camera than this are treated as behind it.
pub const MIN_WARPED_DEPTH: f64 = 1e-6;

/// Default z-buffer slack, meters.
pub const DEFAULT_OCCLUSION_SLACK: f64 = 0.05;

/// Pinhole intrinsics without distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Intrinsics of the next coarser (2×2 pooled) pyramid level. The
    /// principal point keeps pixel centers aligned: `c' = (c + 0.5)/2 − 0.5`.
    pub fn halved(&self) -> Self {
        Self {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx + 0.5) * 0.5 - 0.5,
            cy: (self.cy + 0.5) * 0.5 - 0.5,
        }
    }

    /// Intrinsics at pyramid level `level` (0 = finest).
    pub fn at_level(&self, level: usize) -> Self {
        (0..level).fold(*self, |k, _| k.halved())
    }

    /// Normalized image coordinates `K⁻¹·(x, y, 1)`.
    #[inline]
    pub fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.fx, (y - self.cy) / self.fy)
    }

    /// Back-projects pixel `(x, y)` with inverse depth `d` to a 3D point.
    pub fn back_project(&self, x: f64, y: f64, d: f64) -> Vector3<f64> {
        let (u, v) = self.normalize(x, y);
        Vector3::new(u, v, 1.0) / d
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Outcome of warping one pixel through a rigid motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidWarp {
    pub x: f64,
    pub y: f64,
    /// Depth of the transformed point in the target camera, meters.
    pub z: f64,
    pub valid: bool,
}

/// `K · T · D(x) · K⁻¹ · x` for a pixel with inverse depth `d`.
///
/// `bounds` is the target image size; landing outside `[0, w−1] × [0, h−1]`
/// or behind the camera makes the result invalid.
pub fn warp_rigid(
    x: f64,
    y: f64,
    d: f64,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    bounds: (usize, usize),
) -> RigidWarp {
    if !(d > 0.0 && d <= MAX_INVERSE_DEPTH) {
        return RigidWarp {
            x,
            y,
            z: 0.0,
            valid: false,
        };
    }
    let in_bounds = |x: f64, y: f64| {
        x >= 0.0 && y >= 0.0 && x <= (bounds.0 - 1) as f64 && y <= (bounds.1 - 1) as f64
    };
    if *t == RigidTransform::identity() {
        return RigidWarp {
            x,
            y,
            z: 1.0 / d,
            valid: in_bounds(x, y),
        };
    }
    let (u, v) = k.normalize(x, y);
    // Scaled by d so that the point is R·m + d·t with m = (u, v, 1).
    let q = t.rotation * Vector3::new(u, v, 1.0) + t.translation * d;
    let z = q.z / d;
    if !(z > MIN_WARPED_DEPTH) {
        return RigidWarp {
            x,
            y,
            z,
            valid: false,
        };
    }
    let (wx, wy) = (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
    RigidWarp {
        x: wx,
        y: wy,
        z,
        valid: in_bounds(wx, wy) && wx.is_finite() && wy.is_finite(),
    }
}

/// Whether a warped point survives the z-buffer test against the target's
/// inverse depth: it is occluded when the target surface at its landing
/// pixel is shallower than the point by more than `slack` meters, or when
/// the target carries no depth there.
#[inline]
pub fn is_visible(w: &RigidWarp, target_depth: &InverseDepthImage, slack: f64) -> bool {
    if !w.valid {
        return false;
    }
    match target_depth.nearest(w.x, w.y) {
        Some(d) => 1.0 / d >= w.z - slack,
        None => false,
    }
}

/// Validity flags after z-buffering every warped point.
pub fn occlusion_mask(warped: &[RigidWarp], target_depth: &InverseDepthImage, slack: f64) -> Vec<bool> {
    warped
        .iter()
        .map(|w| is_visible(w, target_depth, slack))
        .collect()
}

/// Derivative of the projected pixel with respect to a left-multiplied
/// twist `(ω, v)` at zero, for a point with normalized coordinates
/// `(pu, pv)` and inverse depth `pd`.
#[rustfmt::skip]
pub fn warp_jacobian_rigid(pu: f64, pv: f64, pd: f64, k: &CameraIntrinsics) -> Matrix2x6<f64> {
    let r0 = [-pu * pv, 1.0 + pu * pu, -pv, pd, 0.0, -pd * pu];
    let r1 = [-1.0 - pv * pv, pu * pv, pu, 0.0, pd, -pd * pv];
    Matrix2x6::new(
        k.fx * r0[0], k.fx * r0[1], k.fx * r0[2], k.fx * r0[3], k.fx * r0[4], k.fx * r0[5],
        k.fy * r1[0], k.fy * r1[1], k.fy * r1[2], k.fy * r1[3], k.fy * r1[4], k.fy * r1[5],
    )
}

#[inline]
pub fn warp_affine(x: f64, y: f64, xi: &AffineParams) -> (f64, f64) {
    xi.apply(x, y)
}

#[rustfmt::skip]
pub fn warp_jacobian_affine(x: f64, y: f64) -> Matrix2x6<f64> {
    Matrix2x6::new(
        x,   0.0, y,   0.0, 1.0, 0.0,
        0.0, x,   0.0, y,   0.0, 1.0,
    )
}

/// Per-pixel warp geometry of the template.
#[derive(Clone, Copy, Debug)]
pub enum Geometry<'a> {
    Affine,
    Rigid {
        depth: &'a InverseDepthImage,
        intrinsics: &'a CameraIntrinsics,
    },
}

/// Rows `∇T(u) · ∂W/∂ξ(u)` of the linearized system, one per usable
/// template pixel, in ascending pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct SteepestDescentImage {
    pub rows: Vec<[f64; 6]>,
    /// Linear pixel index `y·width + x` of each row.
    pub pixels: Vec<usize>,
    pub width: usize,
    /// Pixels without usable depth (rigid only).
    pub dropped: usize,
}

impl SteepestDescentImage {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn pixel_coords(&self, row: usize) -> (usize, usize) {
        let p = self.pixels[row];
        (p % self.width, p / self.width)
    }
}

pub fn steepest_descent_image(gx: &ScalarImage, gy: &ScalarImage, geometry: &Geometry) -> SteepestDescentImage {
    SD_BUILDS.with(|c| c.set(c.get() + 1));
    assert_eq!(gx.dims(), gy.dims(), "gradient images differ in size");
    let (w, h) = gx.dims();
    let mut rows = Vec::with_capacity(w * h);
    let mut pixels = Vec::with_capacity(w * h);
    let mut dropped = 0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (gx.get(x, y), gy.get(x, y));
            let jac = match geometry {
                Geometry::Affine => warp_jacobian_affine(x as f64, y as f64),
                Geometry::Rigid { depth, intrinsics } => {
                    assert_eq!(depth.dims(), (w, h), "depth and gradients differ in size");
                    let d = depth.get(x, y);
                    if !(d > 0.0) {
                        dropped += 1;
                        continue;
                    }
                    let (pu, pv) = intrinsics.normalize(x as f64, y as f64);
                    warp_jacobian_rigid(pu, pv, d, intrinsics)
                }
            };
            let mut row = [0.0; 6];
            for (j, r) in row.iter_mut().enumerate() {
                *r = dx * jac[(0, j)] + dy * jac[(1, j)];
            }
            rows.push(row);
            pixels.push(y * w + x);
        }
    }
    SteepestDescentImage {
        rows,
        pixels,
        width: w,
        dropped,
    }
}
