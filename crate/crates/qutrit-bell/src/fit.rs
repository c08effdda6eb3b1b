//! Weighted nonlinear least squares for the 2:1-locked fringe.
//!
//! The fitted mean is R(θ) = s·[3 + 2λ·f(θ+θ₀)] + B with
//! f(u) = 2cos u + cos 2u and B held FIXED by the caller: a free floor is
//! exactly degenerate with λ (3s+B and 2sλ reparameterize the same curve
//! family), so raw fits use B=0 on raw counts and net fits subtract the
//! measured background from the data instead.
//!
//! Levenberg–Marquardt with the analytic Jacobian, multi-started over θ₀.
//! Weights start from the observed counts and are then rebuilt from the
//! fitted mean (two IRLS passes): observed-count weights over-weight
//! downward fluctuations and bias the contrast high by O(1/counts).

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// One fringe sample: scan coordinate, measured counts (possibly
/// background-subtracted), and its variance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FitPoint {
    pub theta: f64,
    pub value: f64,
    pub variance: f64,
    /// Variance contribution that does not scale with the model mean
    /// (background terms under net subtraction). Kept as-is when the weights
    /// are rebuilt from the fitted model.
    pub extra_variance: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FringeModelFit {
    pub lambda: f64,
    pub sigma_lambda: f64,
    pub theta0: f64,
    pub scale: f64,
    pub chi2_per_dof: f64,
    /// False when the data carry no usable fringe (λ ≈ 0 or singular
    /// covariance), leaving θ₀ meaningless.
    pub phase_identifiable: bool,
}

const LAMBDA_MAX: f64 = 1.05;

fn shape(u: f64) -> f64 {
    2.0 * u.cos() + (2.0 * u).cos()
}

fn shape_deriv(u: f64) -> f64 {
    -2.0 * u.sin() - 2.0 * (2.0 * u).sin()
}

fn model(p: &[f64; 3], theta: f64, floor: f64) -> f64 {
    let (lambda, theta0, s) = (p[0], p[1], p[2]);
    s * (3.0 + 2.0 * lambda * shape(theta + theta0)) + floor
}

fn jacobian_row(p: &[f64; 3], theta: f64) -> [f64; 3] {
    let (lambda, theta0, s) = (p[0], p[1], p[2]);
    let u = theta + theta0;
    let f = shape(u);
    [2.0 * s * f, 2.0 * s * lambda * shape_deriv(u), 3.0 + 2.0 * lambda * f]
}

fn clamp_params(p: &mut [f64; 3]) {
    p[0] = p[0].clamp(0.0, LAMBDA_MAX);
    if p[2] < 1e-12 {
        p[2] = 1e-12;
    }
}

fn cost(points: &[FitPoint], p: &[f64; 3], floor: f64) -> f64 {
    points
        .iter()
        .map(|pt| {
            let r = pt.value - model(p, pt.theta, floor);
            r * r / pt.variance.max(1.0)
        })
        .sum()
}

/// Returns (H = JᵀWJ, g = JᵀW·r) at parameters `p`.
fn normal_equations(
    points: &[FitPoint],
    p: &[f64; 3],
    floor: f64,
) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut h = [[0.0_f64; 3]; 3];
    let mut g = [0.0_f64; 3];
    for pt in points {
        let w = 1.0 / pt.variance.max(1.0);
        let row = jacobian_row(p, pt.theta);
        let r = pt.value - model(p, pt.theta, floor);
        for a in 0..3 {
            g[a] += w * row[a] * r;
            for b in 0..3 {
                h[a][b] += w * row[a] * row[b];
            }
        }
    }
    (h, g)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let factor = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0_f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in (row + 1)..3 {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverts a normal matrix (positive diagonal expected). Jacobi scaling makes
/// the singularity test scale-free: the determinant is evaluated on the
/// correlation matrix, where parameter columns of wildly different magnitude
/// (counts vs radians) no longer dominate.
fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut d = [0.0_f64; 3];
    for i in 0..3 {
        if !(m[i][i] > 0.0) || !m[i][i].is_finite() {
            return None;
        }
        d[i] = 1.0 / m[i][i].sqrt();
    }
    let mut s = [[0.0_f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            s[r][c] = m[r][c] * d[r] * d[c];
        }
    }
    let det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1])
        - s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0])
        + s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
    if !det.is_finite() || det.abs() < 1e-12 {
        return None;
    }
    let adj = [
        [
            s[1][1] * s[2][2] - s[1][2] * s[2][1],
            s[0][2] * s[2][1] - s[0][1] * s[2][2],
            s[0][1] * s[1][2] - s[0][2] * s[1][1],
        ],
        [
            s[1][2] * s[2][0] - s[1][0] * s[2][2],
            s[0][0] * s[2][2] - s[0][2] * s[2][0],
            s[0][2] * s[1][0] - s[0][0] * s[1][2],
        ],
        [
            s[1][0] * s[2][1] - s[1][1] * s[2][0],
            s[0][1] * s[2][0] - s[0][0] * s[2][1],
            s[0][0] * s[1][1] - s[0][1] * s[1][0],
        ],
    ];
    let mut inv = [[0.0_f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            inv[r][c] = adj[r][c] / det * d[r] * d[c];
        }
    }
    Some(inv)
}

fn levenberg_marquardt(points: &[FitPoint], start: [f64; 3], floor: f64) -> ([f64; 3], f64) {
    let mut p = start;
    clamp_params(&mut p);
    let mut current = cost(points, &p, floor);
    let mut mu = 1e-3;
    for _ in 0..200 {
        let (h, g) = normal_equations(points, &p, floor);
        let mut damped = h;
        for d in 0..3 {
            damped[d][d] += mu * h[d][d].max(1e-12);
        }
        let Some(step) = solve3(damped, g) else {
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
            continue;
        };
        let mut trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        clamp_params(&mut trial);
        let trial_cost = cost(points, &trial, floor);
        if trial_cost < current {
            let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            let rel_drop = (current - trial_cost) / current.max(1e-300);
            p = trial;
            current = trial_cost;
            mu = (mu / 3.0).max(1e-12);
            if step_norm < 1e-10 || rel_drop < 1e-14 {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    (p, current)
}

/// Fits the locked-fringe model to `points` with the floor held at `floor`
/// counts. Requires ≥ 6 points spanning at least one period (2π) of the
/// scan coordinate.
pub(crate) fn fit_locked_fringe(points: &[FitPoint], floor: f64) -> Result<FringeModelFit> {
    if points.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs at least 6 scan steps, got {}",
            points.len()
        )));
    }
    let span = points.iter().map(|p| p.theta).fold(f64::MIN, f64::max)
        - points.iter().map(|p| p.theta).fold(f64::MAX, f64::min);
    if span < 2.0 * PI - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs a scan span of at least 2π, got {span:.3}"
        )));
    }
    for pt in points {
        if !pt.value.is_finite() || !pt.variance.is_finite() {
            return Err(Error::Fit("non-finite fringe sample".into()));
        }
    }

    let mean = points.iter().map(|p| p.value).sum::<f64>() / points.len() as f64;
    let s0 = ((mean - floor) / 3.0).max(1e-6);
    let mut best: Option<([f64; 3], f64)> = None;
    for k in 0..8 {
        let theta0 = k as f64 * PI / 4.0;
        let (p, c) = levenberg_marquardt(points, [0.5, theta0, s0], floor);
        if best.map_or(true, |(_, bc)| c < bc) {
            best = Some((p, c));
        }
    }
    let (mut p, _) = best.expect("at least one start");

    // Reweighting passes: Poisson weights taken from the observed counts
    // over-weight downward fluctuations, which drags the fitted troughs down
    // and biases the contrast high by O(1/counts). Rebuilding the weights
    // from the fitted mean removes that term; two passes reach the IRLS
    // fixed point for all practical purposes.
    let mut reweighted: Vec<FitPoint> = points.to_vec();
    let mut best_cost = f64::INFINITY;
    for _ in 0..2 {
        for (rp, pt) in reweighted.iter_mut().zip(points) {
            rp.variance = (model(&p, pt.theta, floor) + pt.extra_variance).max(1.0);
        }
        let (p2, c2) = levenberg_marquardt(&reweighted, p, floor);
        p = p2;
        best_cost = c2;
    }
    // wrap the phase into (−π, π]
    p[1] = p[1] - (2.0 * PI) * ((p[1] + PI) / (2.0 * PI)).floor();

    let dof = (points.len() - 3).max(1) as f64;
    let chi2_per_dof = best_cost / dof;
    // Standard scale-factor convention: when the scatter exceeds what the
    // stated variances predict, widen the errors by √(χ²/dof); never narrow
    // them when the fit is better than expected.
    let err_scale = chi2_per_dof.max(1.0).sqrt();

    let (h, _) = normal_equations(&reweighted, &p, floor);
    let (sigma_lambda, phase_identifiable) = match invert3(&h) {
        Some(cov) if cov[0][0] > 0.0 && cov[1][1] > 0.0 => (
            cov[0][0].sqrt() * err_scale,
            cov[1][1].sqrt() * err_scale <= 1.0,
        ),
        _ => {
            // θ₀ carries no information (e.g. λ ≈ 0); fall back to the
            // (λ, s) block, again with a scale-free correlation test
            let (h00, h02, h22) = (h[0][0], h[0][2], h[2][2]);
            if !(h00 > 0.0) || !(h22 > 0.0) {
                return Err(Error::Fit("singular fit covariance".into()));
            }
            let corr2 = h02 * h02 / (h00 * h22);
            if !corr2.is_finite() || 1.0 - corr2 < 1e-12 {
                return Err(Error::Fit("singular fit covariance".into()));
            }
            // Var(λ) from the 2×2 inverse: h22 / (h00·h22 − h02²)
            ((1.0 / (h00 * (1.0 - corr2))).sqrt() * err_scale, false)
        }
    };
    if !(sigma_lambda > 0.0) || !sigma_lambda.is_finite() {
        return Err(Error::Fit(format!("degenerate sigma_lambda = {sigma_lambda}")));
    }

    Ok(FringeModelFit {
        lambda: p[0],
        sigma_lambda,
        theta0: p[1],
        scale: p[2],
        chi2_per_dof,
        phase_identifiable,
    })
}
