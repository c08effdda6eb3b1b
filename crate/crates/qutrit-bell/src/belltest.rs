//! Three-outcome Bell inequality: evaluation, optimal settings, noise
//! thresholds, visibility relation, and significance arithmetic.
//!
//! The inequality in its reduced form reads
//!
//!   I₃ = 3·[(P¹¹(0,0)−P¹¹(0,1)) + (P²¹(0,1)−P²¹(0,0))
//!         + (P²²(0,0)−P²²(0,1)) + (P¹²(0,0)−P¹²(0,2))] ≤ 2
//!
//! for local variables, with quantum maximum (12+8√3)/9 at the settings
//! below. The reduction presumes the three-class outcome symmetry, which
//! [`evaluate_i3`] monitors rather than enforces.

use crate::error::{check_lambda, Error, Result};
use crate::optics::{central_coincidence_prob, PhaseVector};
use std::f64::consts::PI;

/// Quantum maximum of I₃ for this construction: (12+8√3)/9 ≈ 2.872934.
pub fn i3_max() -> f64 {
    (12.0 + 8.0 * 3.0_f64.sqrt()) / 9.0
}

/// Local-variable bound of the inequality.
pub const LOCAL_BOUND: f64 = 2.0;

/// The two measurement settings per party. All four satisfy long = 2·medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellSettings {
    pub a1: PhaseVector,
    pub a2: PhaseVector,
    pub b1: PhaseVector,
    pub b2: PhaseVector,
}

impl BellSettings {
    /// Alice's setting m ∈ {1,2}.
    pub fn alice(&self, m: usize) -> &PhaseVector {
        match m {
            1 => &self.a1,
            _ => &self.a2,
        }
    }

    /// Bob's setting n ∈ {1,2}.
    pub fn bob(&self, n: usize) -> &PhaseVector {
        match n {
            1 => &self.b1,
            _ => &self.b2,
        }
    }
}

/// The settings that maximize I₃:
/// A₁=(0,0), A₂=(π/3,2π/3), B₁=(π/6,π/3), B₂=(−π/6,−π/3).
pub fn optimal_settings() -> BellSettings {
    BellSettings {
        a1: PhaseVector::new(0.0, 0.0),
        a2: PhaseVector::new(PI / 3.0, 2.0 * PI / 3.0),
        b1: PhaseVector::new(PI / 6.0, PI / 3.0),
        b2: PhaseVector::new(-PI / 6.0, -PI / 3.0),
    }
}

/// An evaluated Bell quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellValue {
    pub i3: f64,
    /// Statistical error on i3; 0 for closed-form evaluations.
    pub sigma_i: f64,
    /// Largest within-class probability spread seen across the four setting
    /// pairs; the reduced inequality presumes this is ≈ 0.
    pub symmetry_residual: f64,
}

impl BellValue {
    /// Whether the supplied probabilities respected the three-class symmetry
    /// the reduction relies on.
    pub fn symmetry_ok(&self) -> bool {
        self.symmetry_residual <= 1e-9
    }
}

/// Evaluates I₃ from a probability function P(m,n,j,k) — Alice setting
/// m ∈ {1,2}, Bob setting n ∈ {1,2}, outputs j,k ∈ {0,1,2}; must be
/// normalized over the 9 outcomes for each setting pair.
pub fn evaluate_i3<F>(probs: F) -> BellValue
where
    F: Fn(usize, usize, usize, usize) -> f64,
{
    let i3 = 3.0
        * ((probs(1, 1, 0, 0) - probs(1, 1, 0, 1))
            + (probs(2, 1, 0, 1) - probs(2, 1, 0, 0))
            + (probs(2, 2, 0, 0) - probs(2, 2, 0, 1))
            + (probs(1, 2, 0, 0) - probs(1, 2, 0, 2)));

    let mut residual = 0.0_f64;
    for (m, n) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        for delta in 0..3usize {
            let class: Vec<f64> = (0..3).map(|j| probs(m, n, j, (j + 3 - delta) % 3)).collect();
            let max = class.iter().cloned().fold(f64::MIN, f64::max);
            let min = class.iter().cloned().fold(f64::MAX, f64::min);
            residual = residual.max(max - min);
        }
    }
    BellValue {
        i3,
        sigma_i: 0.0,
        symmetry_residual: residual,
    }
}

/// I₃ of the closed-form model at mixing λ and the given settings.
pub fn i3_from_model(lambda: f64, settings: &BellSettings) -> Result<BellValue> {
    check_lambda(lambda)?;
    Ok(evaluate_i3(|m, n, j, k| {
        central_coincidence_prob(lambda, settings.alice(m), settings.bob(n), j, k)
            .expect("validated arguments")
    }))
}

/// Noise scaling of the Bell value: I(λ) = λ·(12+8√3)/9.
pub fn lambda_scaling(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * i3_max())
}

/// Inverse of [`lambda_scaling`]: the mixing parameter a Bell value implies.
pub fn lambda_from_i3(i3: f64) -> Result<f64> {
    let lambda = i3 / i3_max();
    check_lambda(lambda)?;
    Ok(lambda)
}

/// Largest mixing parameter at which the inequality is no longer violated:
/// d=2 → 1/√2, d=3 → (6√3−9)/2.
pub fn critical_lambda(d: u32) -> Result<f64> {
    match d {
        2 => Ok(1.0 / 2.0_f64.sqrt()),
        3 => Ok((6.0 * 3.0_f64.sqrt() - 9.0) / 2.0),
        other => Err(Error::Dimension(other, "2 or 3")),
    }
}

/// Fringe visibility of a d-outcome Werner state: V = dλ/(2 + λ(d−2)).
pub fn visibility_from_lambda(d: u32, lambda: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::Dimension(d, "d >= 2"));
    }
    check_lambda(lambda)?;
    let df = d as f64;
    Ok(df * lambda / (2.0 + lambda * (df - 2.0)))
}

/// Inverse of [`visibility_from_lambda`]: λ = 2V/(d − V(d−2)).
pub fn lambda_from_visibility(d: u32, v: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::Dimension(d, "d >= 2"));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::ProbabilityRange(v));
    }
    let df = d as f64;
    let lambda = 2.0 * v / (df - v * (df - 2.0));
    check_lambda(lambda)?;
    Ok(lambda)
}

/// Standard deviations above the local bound: (I − 2)/σ_I.
pub fn violation_sigma(i: f64, sigma_i: f64) -> Result<f64> {
    if !(sigma_i > 0.0) {
        return Err(Error::SigmaRange(sigma_i));
    }
    Ok((i - LOCAL_BOUND) / sigma_i)
}

/// First-order error propagation from σ_λ:
/// σ_I = σ_λ·(12+8√3)/9 and σ_V = σ_λ·2d/(2+λ(d−2))².
pub fn propagate_lambda_error(d: u32, lambda: f64, sigma_lambda: f64) -> Result<(f64, f64)> {
    if d < 2 {
        return Err(Error::Dimension(d, "d >= 2"));
    }
    check_lambda(lambda)?;
    if sigma_lambda < 0.0 {
        return Err(Error::SigmaRange(sigma_lambda));
    }
    let df = d as f64;
    let denom = 2.0 + lambda * (df - 2.0);
    Ok((sigma_lambda * i3_max(), sigma_lambda * 2.0 * df / (denom * denom)))
}
