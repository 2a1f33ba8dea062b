//! Warp algebra for the two motion families: rigid body motion in SE(3)
//! and the six-parameter 2D affine warp.
//!
//! Twists are ordered `(ω₁, ω₂, ω₃, v₁, v₂, v₃)` everywhere in the crate,
//! which is also the column order of the rigid warp Jacobian in
//! [`crate::warp::warp_jacobian_rigid`].

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Distance from π at which [`log_se3`] reports the cut locus.
pub const CUT_LOCUS_TOLERANCE: f64 = 1e-9;

/// Smallest |det| of the affine linear block accepted by [`AffineParams::inverse`].
pub const MIN_AFFINE_DET: f64 = 1e-12;

/// Lie-algebra coordinates of a rigid motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    /// Rotation part, radians.
    pub omega: Vector3<f64>,
    /// Translation part, meters.
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(xi: &Vector6<f64>) -> Self {
        Self::new(xi.fixed_rows::<3>(0).into(), xi.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.v.x,
            self.v.y,
            self.v.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// A proper rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`, i.e. `other` is applied first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose_rigid(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert_rigid(self)
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Checks `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).norm() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        compose_rigid(&self, &rhs)
    }
}

#[rustfmt::skip]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues coefficients `(sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let s = theta.sin();
        let t2 = theta * theta;
        // (1 − cosθ)/θ² via the half angle; the direct form cancels badly.
        let half = 0.5 * theta;
        let sinc_half = half.sin() / half;
        (s / theta, 0.5 * sinc_half * sinc_half, (theta - s) / (t2 * theta))
    }
}

/// Exponential map se(3) → SE(3).
pub fn exp_se3(xi: &Twist) -> RigidTransform {
    let theta = xi.omega.norm();
    let (a, b, c) = rodrigues_coefficients(theta);
    let w = hat(&xi.omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v_mat = Matrix3::identity() + w * b + w2 * c;
    RigidTransform::new(rotation, v_mat * xi.v)
}

/// Logarithm of a rotation matrix on the principal branch, angle in `[0, π]`.
///
/// Returns the rotation vector and whether the angle is on the cut locus.
pub fn log_so3(r: &Matrix3<f64>) -> (Vector3<f64>, bool) {
    let antisym = vee(&(r - r.transpose())) * 0.5; // sinθ · n
    let sin_theta = antisym.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);
    let near_pi = (std::f64::consts::PI - theta) < CUT_LOCUS_TOLERANCE;

    if theta < SMALL_ANGLE {
        // θ/sinθ ≈ 1 + θ²/6
        return (antisym * (1.0 + theta * theta / 6.0), false);
    }
    if sin_theta > 1e-4 {
        return (antisym * (theta / sin_theta), near_pi);
    }

    // Close to π the antisymmetric part vanishes; read the axis off
    // nnᵀ = (sym(R) − cosθ·I) / (1 − cosθ).
    let sym = (r + r.transpose()) * 0.5;
    let nn = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&i, &j| nn[(i, i)].total_cmp(&nn[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = nn.column(k).into();
    axis /= nn[(k, k)].max(0.0).sqrt().max(f64::MIN_POSITIVE);
    axis.normalize_mut();
    if axis.dot(&antisym) < 0.0 {
        axis = -axis;
    }
    (axis * theta, near_pi)
}

/// Logarithm map SE(3) → se(3), inverse of [`exp_se3`].
///
/// Fails with [`Error::NearCutLocus`] when the rotation angle is within
/// [`CUT_LOCUS_TOLERANCE`] of π; the error carries the (still usable)
/// logarithm.
pub fn log_se3(t: &RigidTransform) -> Result<Twist> {
    let (omega, near_pi) = log_so3(&t.rotation);
    let theta = omega.norm();
    let w = hat(&omega);
    // V⁻¹ = I − ½[ω]× + (1/θ²)(1 − A/(2B))[ω]×²
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (a, b, _) = rodrigues_coefficients(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * coeff;
    let twist = Twist::new(omega, v_inv * t.translation);
    if near_pi {
        Err(Error::NearCutLocus {
            approximate: twist,
        })
    } else {
        Ok(twist)
    }
}

/// [`log_se3`] that accepts the reduced-precision result on the cut locus.
pub fn log_se3_lossy(t: &RigidTransform) -> Twist {
    match log_se3(t) {
        Ok(xi) => xi,
        Err(Error::NearCutLocus { approximate }) => approximate,
        Err(_) => unreachable!("log_se3 only reports the cut locus"),
    }
}

pub fn compose_rigid(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert_rigid(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform::new(rt, -(rt * t.translation))
}

/// Parameters of the warp
///
/// ```text
/// [1+ξ₁   ξ₃   ξ₅]
/// [ ξ₂  1+ξ₄   ξ₆]
/// ```
///
/// in pixel coordinates. The zero vector is the identity warp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f64; 6]);

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self([0.0; 6])
    }

    pub fn from_translation(tx: f64, ty: f64) -> Self {
        Self([0.0, 0.0, 0.0, 0.0, tx, ty])
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.0)
    }

    pub fn determinant(&self) -> f64 {
        let p = &self.0;
        (1.0 + p[0]) * (1.0 + p[3]) - p[1] * p[2]
    }

    /// Homogeneous 3×3 form.
    #[rustfmt::skip]
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let p = &self.0;
        Matrix3::new(
            1.0 + p[0], p[2],       p[4],
            p[1],       1.0 + p[3], p[5],
            0.0,        0.0,        1.0,
        )
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self([
            m[(0, 0)] - 1.0,
            m[(1, 0)],
            m[(0, 1)],
            m[(1, 1)] - 1.0,
            m[(0, 2)],
            m[(1, 2)],
        ])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = &self.0;
        (
            (1.0 + p[0]) * x + p[2] * y + p[4],
            p[1] * x + (1.0 + p[3]) * y + p[5],
        )
    }

    /// `self ∘ delta`: the warp that applies `delta` first.
    pub fn compose(&self, delta: &AffineParams) -> AffineParams {
        affine_compose(self, delta)
    }

    pub fn inverse(&self) -> Result<AffineParams> {
        affine_inverse(self)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

pub fn affine_compose(xi: &AffineParams, dxi: &AffineParams) -> AffineParams {
    let [p1, p2, p3, p4, p5, p6] = xi.0;
    let [d1, d2, d3, d4, d5, d6] = dxi.0;
    AffineParams([
        p1 + d1 + p1 * d1 + p3 * d2,
        p2 + d2 + p2 * d1 + p4 * d2,
        p3 + d3 + p1 * d3 + p3 * d4,
        p4 + d4 + p2 * d3 + p4 * d4,
        p5 + d5 + p1 * d5 + p3 * d6,
        p6 + d6 + p2 * d5 + p4 * d6,
    ])
}

pub fn affine_inverse(xi: &AffineParams) -> Result<AffineParams> {
    let det = xi.determinant();
    if det.abs() < MIN_AFFINE_DET || !det.is_finite() {
        return Err(Error::DegenerateAffine { det });
    }
    let [p1, p2, p3, p4, p5, p6] = xi.0;
    let s = 1.0 / det;
    Ok(AffineParams([
        s * (-p1 - p1 * p4 + p2 * p3),
        s * -p2,
        s * -p3,
        s * (-p4 - p1 * p4 + p2 * p3),
        s * (-p5 - p4 * p5 + p3 * p6),
        s * (-p6 - p1 * p6 + p2 * p5),
    ]))
}
