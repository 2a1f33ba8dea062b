//! Diagonal robust weighting and the weighted normal equations.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::SteepestDescentImage;

/// Classical M-estimator used to fill the diagonal weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustLoss {
    /// Plain least squares, every valid residual has weight 1.
    None,
    Huber { delta: f64 },
    Tukey { c: f64 },
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Huber { delta: 0.1 }
    }
}

impl RobustLoss {
    pub fn validate(&self) -> Result<()> {
        let scale = match *self {
            RobustLoss::None => return Ok(()),
            RobustLoss::Huber { delta } => delta,
            RobustLoss::Tukey { c } => c,
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "robust loss scale must be positive, got {scale}"
            )));
        }
        Ok(())
    }

    /// Weight `w(r)`, normalized so that `w(0) = 1`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        let a = r.abs();
        match *self {
            RobustLoss::None => 1.0,
            RobustLoss::Huber { delta } => {
                if a <= delta {
                    1.0
                } else {
                    delta / a
                }
            }
            RobustLoss::Tukey { c } => {
                if a <= c {
                    let u = r / c;
                    let s = 1.0 - u * u;
                    s * s
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RobustLoss::None => "none",
            RobustLoss::Huber { .. } => "huber",
            RobustLoss::Tukey { .. } => "tukey",
        }
    }
}

/// Residuals `I(W(u; ξ)) − T(u)` aligned with the rows of a
/// [`SteepestDescentImage`]. Invalid entries hold 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualField {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ResidualField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `rᵀWr / (valid count)`; `+∞` when nothing is valid.
    pub fn objective(&self, weights: &WeightField) -> f64 {
        debug_assert_eq!(self.len(), weights.len());
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.values.len() {
            if self.valid[i] {
                let r = self.values[i];
                sum += weights.weights[i] * r * r;
                n += 1;
            }
        }
        if n == 0 {
            f64::INFINITY
        } else {
            sum / n as f64
        }
    }
}

/// Per-row weights, 0 for invalid rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightField {
    pub weights: Vec<f64>,
}

impl WeightField {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn compute_weights(residuals: &ResidualField, loss: &RobustLoss) -> WeightField {
    WeightField {
        weights: residuals
            .values
            .iter()
            .zip(&residuals.valid)
            .map(|(&r, &ok)| if ok { loss.weight(r) } else { 0.0 })
            .collect(),
    }
}

/// `JᵀWJ / M` and `JᵀWr / M` over the `M` currently valid rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEquations {
    pub hessian: Matrix6<f64>,
    pub gradient: Vector6<f64>,
    pub valid: usize,
}

/// Accumulates in ascending row order, so results are reproducible bit for
/// bit.
pub fn weighted_normal_equations(
    sd: &SteepestDescentImage,
    weights: &WeightField,
    residuals: &ResidualField,
) -> Result<NormalEquations> {
    assert_eq!(sd.len(), weights.len(), "weights not aligned with Jacobian rows");
    assert_eq!(sd.len(), residuals.len(), "residuals not aligned with Jacobian rows");
    let mut h = [[0.0f64; 6]; 6];
    let mut g = [0.0f64; 6];
    let mut valid = 0usize;
    for (i, row) in sd.rows.iter().enumerate() {
        if !residuals.valid[i] {
            continue;
        }
        valid += 1;
        let w = weights.weights[i];
        if w == 0.0 {
            continue;
        }
        let wr = w * residuals.values[i];
        for a in 0..6 {
            let wa = w * row[a];
            g[a] += row[a] * wr;
            for b in a..6 {
                h[a][b] += wa * row[b];
            }
        }
    }
    if valid < 6 {
        return Err(Error::Underdetermined { valid });
    }
    let m = valid as f64;
    let hessian = Matrix6::from_fn(|a, b| if a <= b { h[a][b] / m } else { h[b][a] / m });
    let gradient = Vector6::from_fn(|a, _| g[a] / m);
    Ok(NormalEquations {
        hessian,
        gradient,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: Vec<f64>) -> ResidualField {
        let valid = vec![true; values.len()];
        ResidualField { values, valid }
    }

    fn sd_from_rows(rows: Vec<[f64; 6]>) -> SteepestDescentImage {
        let n = rows.len();
        SteepestDescentImage {
            rows,
            pixels: (0..n).collect(),
            width: n.max(1),
            dropped: 0,
        }
    }

    #[test]
    fn weight_examples() {
        let huber = RobustLoss::Huber { delta: 0.1 };
        let w = compute_weights(&field(vec![0.0; 5]), &huber);
        assert!(w.weights.iter().all(|&v| v == 1.0));
        assert_eq!(huber.weight(0.2), 0.5);
        let tukey = RobustLoss::Tukey { c: 0.3 };
        assert_eq!(tukey.weight(0.3), 0.0);
        assert_eq!(tukey.weight(0.0), 1.0);
        assert_eq!(RobustLoss::None.weight(123.0), 1.0);

        let mut r = field(vec![0.5, 0.5]);
        r.valid[1] = false;
        assert_eq!(compute_weights(&r, &RobustLoss::None).weights, vec![1.0, 0.0]);
    }

    #[test]
    fn invalid_scales_rejected() {
        assert!(RobustLoss::Huber { delta: 0.0 }.validate().is_err());
        assert!(RobustLoss::Tukey { c: -1.0 }.validate().is_err());
        assert!(RobustLoss::Tukey { c: f64::NAN }.validate().is_err());
        assert!(RobustLoss::None.validate().is_ok());
    }

    proptest! {
        #[test]
        fn weights_even_bounded_monotone(r in -5.0f64..5.0, s in 0.0f64..5.0, scale in 0.01f64..2.0) {
            for loss in [RobustLoss::None, RobustLoss::Huber { delta: scale }, RobustLoss::Tukey { c: scale }] {
                let w = loss.weight(r);
                prop_assert_eq!(w, loss.weight(-r));
                prop_assert!((0.0..=1.0).contains(&w));
                prop_assert_eq!(loss.weight(0.0), 1.0);
                let (lo, hi) = if r.abs() <= s { (r.abs(), s) } else { (s, r.abs()) };
                prop_assert!(loss.weight(hi) <= loss.weight(lo));
            }
        }

        #[test]
        fn weights_scale_equivariant(r in -5.0f64..5.0, scale in 0.01f64..2.0, k in 0.1f64..10.0) {
            let pairs = [
                (RobustLoss::Huber { delta: scale }, RobustLoss::Huber { delta: scale * k }),
                (RobustLoss::Tukey { c: scale }, RobustLoss::Tukey { c: scale * k }),
            ];
            for (a, b) in pairs {
                prop_assert!((a.weight(r) - b.weight(r * k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_equations_small_cases() {
        let rows: Vec<[f64; 6]> = (0..8).map(|i| [i as f64, 1.0, 2.0, 0.5, -1.0, 3.0]).collect();
        let sd = sd_from_rows(rows.clone());
        let r = field(vec![0.3; 8]);
        let zero = WeightField { weights: vec![0.0; 8] };
        let ne = weighted_normal_equations(&sd, &zero, &r).unwrap();
        assert_eq!(ne.hessian, Matrix6::zeros());
        assert_eq!(ne.gradient, Vector6::zeros());

        // One valid pixel among six.
        let mut r = field(vec![0.0; 6]);
        r.values[2] = 0.7;
        let sd6 = sd_from_rows(rows[..6].to_vec());
        let mut w = WeightField { weights: vec![0.0; 6] };
        w.weights[2] = 1.0;
        let ne = weighted_normal_equations(&sd6, &w, &r).unwrap();
        let j = Vector6::from_row_slice(&rows[2]);
        assert!((ne.hessian * 6.0 - j * j.transpose()).abs().max() < 1e-14);
        assert!((ne.gradient * 6.0 - j * 0.7).abs().max() < 1e-14);

        let mut few = field(vec![0.1; 8]);
        few.valid[..3].iter_mut().for_each(|v| *v = false);
        few.valid[3..6].iter_mut().for_each(|v| *v = false);
        assert!(matches!(
            weighted_normal_equations(&sd, &compute_weights(&few, &RobustLoss::None), &few),
            Err(Error::Underdetermined { valid: 2 })
        ));
    }

    #[test]
    fn normal_equations_match_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = 100;
            let rows: Vec<[f64; 6]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
                .collect();
            let mut r = field((0..n).map(|_| rng.random_range(-0.5..0.5)).collect());
            for i in 0..n {
                r.valid[i] = rng.random_bool(0.8);
                if !r.valid[i] {
                    r.values[i] = 0.0;
                }
            }
            let w = compute_weights(&r, &RobustLoss::Huber { delta: 0.2 });
            let ne = weighted_normal_equations(&sd_from_rows(rows.clone()), &w, &r).unwrap();

            let j = DMatrix::from_fn(n, 6, |i, c| rows[i][c]);
            let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.weights.clone()));
            let rv = nalgebra::DVector::from_vec(r.values.clone());
            let m = r.valid_count() as f64;
            let h = j.transpose() * &wd * &j / m;
            let g = j.transpose() * &wd * rv / m;
            for a in 0..6 {
                assert!((ne.gradient[a] - g[a]).abs() < 1e-10);
                for b in 0..6 {
                    assert!((ne.hessian[(a, b)] - h[(a, b)]).abs() < 1e-10);
                }
            }
            assert_eq!(ne.hessian, ne.hessian.transpose());
            assert!(ne.hessian.symmetric_eigenvalues().iter().all(|&e| e > -1e-12));
        }
    }

    #[test]
    fn objective_ignores_invalid() {
        let mut r = field(vec![0.2, 0.4, 9.0]);
        r.valid[2] = false;
        let w = compute_weights(&r, &RobustLoss::None);
        assert!((r.objective(&w) - (0.04 + 0.16) / 2.0).abs() < 1e-15);
        let none = ResidualField { values: vec![0.0], valid: vec![false] };
        assert_eq!(none.objective(&WeightField { weights: vec![0.0] }), f64::INFINITY);
    }
}
