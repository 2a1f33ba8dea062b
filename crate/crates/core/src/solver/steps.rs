//! Linearized update rules: Gauss-Newton, damped Levenberg-Marquardt, the
//! heuristic λ schedule, and selection among damping proposals.

use nalgebra::{Cholesky, Matrix6, Vector6};

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry make the
/// system ill-conditioned.
pub const CONDITION_FLOOR: f64 = 1e-12;

/// Damping bounds for the heuristic λ schedule.
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;

/// Stand-in for a zero diagonal entry of `H` when damping.
pub const ZERO_DIAGONAL_SUBSTITUTE: f64 = 1e-12;

/// Solves `A·x = b` for symmetric positive semidefinite `A`.
///
/// Cholesky first; if it fails or a pivot falls under the conditioning
/// floor, a symmetric diagonally-pivoted LDLᵀ decomposition decides.
pub fn solve_spd(a: &Matrix6<f64>, b: &Vector6<f64>) -> Result<Vector6<f64>> {
    solve_spd_with_floor(a, b, CONDITION_FLOOR)
}

fn solve_spd_with_floor(a: &Matrix6<f64>, b: &Vector6<f64>, relative_floor: f64) -> Result<Vector6<f64>> {
    let scale = (0..6).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::IllConditioned);
    }
    let floor = relative_floor * scale;
    if let Some(chol) = Cholesky::new(*a) {
        let l = chol.l_dirty();
        if (0..6).all(|i| l[(i, i)] * l[(i, i)] > floor) {
            let x = chol.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    solve_pivoted_ldlt(a, b, floor)
}

fn solve_pivoted_ldlt(a: &Matrix6<f64>, b: &Vector6<f64>, floor: f64) -> Result<Vector6<f64>> {
    let mut m = *a;
    let mut perm: [usize; 6] = std::array::from_fn(|i| i);
    let mut l = Matrix6::<f64>::identity();
    let mut d = [0.0f64; 6];

    for k in 0..6 {
        // Largest remaining diagonal.
        let p = (k..6)
            .max_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]))
            .unwrap_or(k);
        if p != k {
            m.swap_rows(k, p);
            m.swap_columns(k, p);
            perm.swap(k, p);
            for j in 0..k {
                l.swap((k, j), (p, j));
            }
        }
        let pivot = m[(k, k)];
        if !(pivot > floor) {
            return Err(Error::IllConditioned);
        }
        d[k] = pivot;
        for i in k + 1..6 {
            l[(i, k)] = m[(i, k)] / pivot;
        }
        for i in k + 1..6 {
            for j in k + 1..6 {
                m[(i, j)] -= l[(i, k)] * pivot * l[(j, k)];
            }
        }
    }

    // P·A·Pᵀ = L·D·Lᵀ
    let pb = Vector6::from_fn(|i, _| b[perm[i]]);
    let mut y = pb;
    for i in 0..6 {
        for j in 0..i {
            y[i] -= l[(i, j)] * y[j];
        }
    }
    for i in 0..6 {
        y[i] /= d[i];
    }
    for i in (0..6).rev() {
        for j in i + 1..6 {
            y[i] -= l[(j, i)] * y[j];
        }
    }
    let mut x = Vector6::zeros();
    for i in 0..6 {
        x[perm[i]] = y[i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::IllConditioned)
    }
}

/// Solves `H·Δξ = g`.
pub fn gauss_newton_step(h: &Matrix6<f64>, g: &Vector6<f64>) -> Result<Vector6<f64>> {
    solve_spd(h, g)
}

/// Solves `(H + λ·diag(H))·Δξ = g`.
///
/// Zero diagonal entries of `H` are damped with `λ·1e-12` instead, which
/// keeps the damped system definite; only non-positive pivots fail.
pub fn lm_step(h: &Matrix6<f64>, g: &Vector6<f64>, lambda: f64) -> Result<Vector6<f64>> {
    debug_assert!(lambda >= 0.0);
    let mut damped = *h;
    for i in 0..6 {
        let diag = h[(i, i)];
        let scale = if diag == 0.0 { ZERO_DIAGONAL_SUBSTITUTE } else { diag };
        damped[(i, i)] += lambda * scale;
    }
    solve_spd_with_floor(&damped, g, 0.0)
}

/// Outcome of one step of the heuristic damping schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmDecision {
    pub accept: bool,
    pub lambda: f64,
    /// A step was rejected while λ was already at [`LAMBDA_MAX`].
    pub exhausted: bool,
}

/// Decrease λ by `factor` after an improving step, increase it after a
/// worse (or non-finite) one.
pub fn lm_adapt(lambda: f64, factor: f64, objective_before: f64, objective_after: f64) -> LmDecision {
    debug_assert!(factor > 1.0);
    if objective_after.is_finite() && objective_after <= objective_before {
        LmDecision {
            accept: true,
            lambda: (lambda / factor).max(LAMBDA_MIN),
            exhausted: false,
        }
    } else {
        LmDecision {
            accept: false,
            lambda: (lambda * factor).min(LAMBDA_MAX),
            exhausted: lambda >= LAMBDA_MAX,
        }
    }
}

/// `n` geometrically spaced dampings over `[min, max]`, both endpoints
/// included.
pub fn propose_dampings(n: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (llo, lhi) = (lo.ln(), hi.ln());
            let step = (lhi - llo) / (n - 1) as f64;
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    i => (llo + step * i as f64).exp(),
                })
                .collect()
        }
    }
}

/// The proposal picked by [`proposal_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalChoice {
    pub delta: Vector6<f64>,
    pub lambda: f64,
    pub objective: f64,
}

/// Evaluates the damped step for every proposal with the true objective
/// and returns the best one. Ties go to the larger λ.
pub fn proposal_step(
    h: &Matrix6<f64>,
    g: &Vector6<f64>,
    proposals: &[f64],
    mut evaluate: impl FnMut(&Vector6<f64>) -> f64,
) -> Result<ProposalChoice> {
    let mut best: Option<ProposalChoice> = None;
    for &lambda in proposals {
        let Ok(delta) = lm_step(h, g, lambda) else {
            continue;
        };
        let objective = evaluate(&delta);
        if !objective.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => objective < b.objective || (objective == b.objective && lambda > b.lambda),
        };
        if better {
            best = Some(ProposalChoice {
                delta,
                lambda,
                objective,
            });
        }
    }
    best.ok_or(Error::NoAdmissibleStep)
}
