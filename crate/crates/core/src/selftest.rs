//! Built-in numerical checks: warp Jacobians against central differences,
//! Lie group and affine group laws, and a solver smoke test.
//!
//! These back the `selftest` command of the CLI so a build can be checked
//! on the machine it runs on.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{exp_se3, log_se3, AffineParams, Twist};
use crate::imaging::ScalarImage;
use crate::solver::{align, Family, Frame, SolverConfig};
use crate::warp::{warp_affine, warp_jacobian_affine, warp_jacobian_rigid, warp_rigid, CameraIntrinsics};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Largest error observed.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

const UNBOUNDED: (usize, usize) = (1 << 20, 1 << 20);

/// Central-difference check of the rigid warp Jacobian at the identity.
/// The error of each column is relative to `max(‖column‖, 1)`.
pub fn rigid_jacobian_check(samples: usize, seed: u64) -> CheckOutcome {
    let k = CameraIntrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (x, y) = (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let d = rng.random_range(0.2..2.0);
        let (pu, pv) = k.normalize(x, y);
        let jac = warp_jacobian_rigid(pu, pv, d, &k);
        for c in 0..6 {
            let mut e = Vector6::zeros();
            e[c] = h;
            let plus = warp_rigid(x, y, d, &k, &exp_se3(&Twist::from_vector(&e)), UNBOUNDED);
            let minus = warp_rigid(x, y, d, &k, &exp_se3(&Twist::from_vector(&-e)), UNBOUNDED);
            let fd = [(plus.x - minus.x) / (2.0 * h), (plus.y - minus.y) / (2.0 * h)];
            let scale = jac.column(c).norm().max(1.0);
            for (r, v) in fd.iter().enumerate() {
                worst = worst.max((v - jac[(r, c)]).abs() / scale);
            }
        }
    }
    CheckOutcome::new("rigid warp jacobian", worst, 1e-4)
}

/// Central-difference check of the affine warp Jacobian at the identity.
pub fn affine_jacobian_check(samples: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (x, y) = (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let jac = warp_jacobian_affine(x, y);
        for c in 0..6 {
            let mut p = [0.0; 6];
            p[c] = h;
            let plus = warp_affine(x, y, &AffineParams(p));
            p[c] = -h;
            let minus = warp_affine(x, y, &AffineParams(p));
            let fd = [(plus.0 - minus.0) / (2.0 * h), (plus.1 - minus.1) / (2.0 * h)];
            let scale = jac.column(c).norm().max(1.0);
            for (r, v) in fd.iter().enumerate() {
                worst = worst.max((v - jac[(r, c)]).abs() / scale);
            }
        }
    }
    CheckOutcome::new("affine warp jacobian", worst, 1e-9)
}

/// `log(exp(ξ)) = ξ` for rotation angles below 3 rad.
pub fn exp_log_check(samples: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let omega = axis * rng.random_range(0.0..3.0);
        let v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let xi = Twist::new(omega, v);
        let err = match log_se3(&exp_se3(&xi)) {
            Ok(back) => (back.to_vector() - xi.to_vector()).abs().max(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    CheckOutcome::new("se3 exp/log roundtrip", worst, 1e-9)
}

/// Affine composition and inversion against 3×3 homogeneous matrices.
pub fn affine_group_check(samples: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let mut p: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
        p[4] *= 20.0;
        p[5] *= 20.0;
        AffineParams(p)
    };
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (a, b) = (draw(), draw());
        let composed = a.compose(&b).to_matrix();
        worst = worst.max((composed - a.to_matrix() * b.to_matrix()).abs().max());
        let inv = match a.inverse() {
            Ok(inv) => inv.to_matrix(),
            Err(_) => {
                worst = f64::INFINITY;
                continue;
            }
        };
        let oracle = a.to_matrix().try_inverse().expect("well conditioned sample");
        worst = worst.max((inv - oracle).abs().max());
    }
    CheckOutcome::new("affine compose/inverse", worst, 1e-10)
}

/// Aligning an image with itself must return the identity.
pub fn self_alignment_check() -> CheckOutcome {
    let img = ScalarImage::from_fn(64, 64, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.2 * (x / 7.0).sin() + 0.2 * (y / 5.0 + x / 11.0).cos()
    });
    let frame = Frame::intensity(img);
    let worst = match align(&frame, &frame, Family::Affine, &SolverConfig::default()) {
        Ok(r) => {
            let est = r.estimate.as_affine().copied().unwrap_or_default();
            est.0.iter().map(|v| v.abs()).fold(0.0, f64::max)
        }
        Err(_) => f64::INFINITY,
    };
    CheckOutcome::new("affine self-alignment", worst, 1e-12)
}

/// Every check with its default sample count.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        rigid_jacobian_check(200, seed),
        affine_jacobian_check(200, seed),
        exp_log_check(1000, seed),
        affine_group_check(1000, seed),
        self_alignment_check(),
    ]
}
