//! Exact state representation for the post-selected two-photon qutrit and a
//! brute-force Born-rule oracle.
//!
//! The oracle is the ground truth every closed-form probability in this crate
//! is checked against: it carries no algebraic simplification, just the
//! analyzer unitaries applied to the three path amplitudes.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{check_lambda, check_output_index, Error, Result};
use crate::optics::PhaseVector;

/// Two-photon state over the three path pairs (short-short, medium-medium,
/// long-long) that survive central-peak post-selection.
///
/// Invariant: |c_s|² + |c_m|² + |c_l|² = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QutritPairState {
    /// Path-pair amplitudes, indexed 0=short, 1=medium, 2=long.
    pub amplitudes: [Complex64; 3],
}

impl QutritPairState {
    /// Builds a state from unnormalized amplitudes, rescaling to unit norm.
    pub fn new(amplitudes: [Complex64; 3]) -> Result<Self> {
        let norm_sqr: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if !norm_sqr.is_finite() || norm_sqr <= 0.0 {
            return Err(Error::Config(
                "state amplitudes must have positive finite norm".into(),
            ));
        }
        let norm = norm_sqr.sqrt();
        Ok(Self {
            amplitudes: amplitudes.map(|c| c / norm),
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Equal-weight superposition of the three path pairs: amplitudes all 1/√3.
pub fn make_max_entangled() -> QutritPairState {
    let a = Complex64::new(1.0 / 3.0_f64.sqrt(), 0.0);
    QutritPairState { amplitudes: [a; 3] }
}

/// Isotropic mixture of a pure two-qutrit state with white noise:
/// ρ = λ·|ψ⟩⟨ψ| + (1−λ)·𝕀₉/9.
#[derive(Debug, Clone, Copy)]
pub struct WernerState {
    pub pure: QutritPairState,
    /// Mixing parameter, in [0, 1].
    pub lambda: f64,
}

impl WernerState {
    pub fn new(pure: QutritPairState, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { pure, lambda })
    }
}

/// Mixes a pure-state outcome probability with white noise:
/// λ·p + (1−λ)/9.
pub fn werner_probability(w: &WernerState, pure_prob: f64) -> Result<f64> {
    check_lambda(w.lambda)?;
    if !(0.0..=1.0).contains(&pure_prob) {
        return Err(Error::ProbabilityRange(pure_prob));
    }
    Ok(w.lambda * pure_prob + (1.0 - w.lambda) / 9.0)
}

/// Joint outcome probabilities P(j,k) for Alice output j, Bob output k.
///
/// Invariant: entries non-negative and summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOutcomeTable {
    pub probs: [[f64; 3]; 3],
}

impl JointOutcomeTable {
    pub fn total(&self) -> f64 {
        self.probs.iter().flatten().sum()
    }

    /// Checks non-negativity and unit total within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for row in &self.probs {
            for &p in row {
                if p < -tol || !p.is_finite() {
                    return Err(Error::ProbabilityRange(p));
                }
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > tol {
            return Err(Error::Config(format!(
                "outcome table total {total} deviates from 1 beyond {tol}"
            )));
        }
        Ok(())
    }

    /// Largest within-class spread, where entries with equal (j−k) mod 3
    /// form one class. Zero for tables obeying the three-class symmetry.
    pub fn symmetry_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for delta in 0..3 {
            let class: Vec<f64> = (0..3).map(|j| self.probs[j][(j + 3 - delta) % 3]).collect();
            let max = class.iter().cloned().fold(f64::MIN, f64::max);
            let min = class.iter().cloned().fold(f64::MAX, f64::min);
            worst = worst.max(max - min);
        }
        worst
    }
}

/// Born-rule outcome table for one analyzer setting per side.
///
/// Alice's tritter is U_{ja} = (1/√3)·exp(+2πi·a·j/3); Bob's is its
/// element-wise conjugate, so the joint amplitude for outputs (j,k) is
///
///   A(j,k) = (1/3) Σ_a c_a · e^{i(α_a+β_a)} · e^{2πi·a(j−k)/3},
///
/// with the short-path phases fixed at zero (α = [0, medium, long], same for
/// β). The returned table is renormalized by its total to pin the unit-sum
/// invariant against rounding.
pub fn born_rule_oracle(
    state: &QutritPairState,
    alice: &PhaseVector,
    bob: &PhaseVector,
) -> JointOutcomeTable {
    let alpha = [0.0, alice.medium, alice.long];
    let beta = [0.0, bob.medium, bob.long];
    let mut probs = [[0.0_f64; 3]; 3];
    let mut total = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            let mut amp = Complex64::new(0.0, 0.0);
            for a in 0..3 {
                let tritter = 2.0 * PI * a as f64 * (j as f64 - k as f64) / 3.0;
                let phase = alpha[a] + beta[a] + tritter;
                amp += state.amplitudes[a] * Complex64::from_polar(1.0, phase);
            }
            let p = amp.norm_sqr() / 9.0;
            probs[j][k] = p;
            total += p;
        }
    }
    for row in &mut probs {
        for p in row {
            *p /= total;
        }
    }
    JointOutcomeTable { probs }
}

/// Born-rule table for a Werner state: oracle output mixed with uniform
/// noise entry-by-entry.
pub fn born_rule_werner(
    w: &WernerState,
    alice: &PhaseVector,
    bob: &PhaseVector,
) -> Result<JointOutcomeTable> {
    check_lambda(w.lambda)?;
    let pure = born_rule_oracle(&w.pure, alice, bob);
    let mut probs = [[0.0_f64; 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            probs[j][k] = w.lambda * pure.probs[j][k] + (1.0 - w.lambda) / 9.0;
        }
    }
    Ok(JointOutcomeTable { probs })
}

/// Convenience accessor with index validation.
pub fn outcome_prob(table: &JointOutcomeTable, j: usize, k: usize) -> Result<f64> {
    check_output_index(j)?;
    check_output_index(k)?;
    Ok(table.probs[j][k])
}

#[cfg(test)]
mod tests {
    use super::*;

    // (4+2√3)/27, the bright Bell-setting coincidence probability.
    const P_BRIGHT: f64 = 0.27644820796806496;

    fn bell_b1() -> PhaseVector {
        PhaseVector::new(PI / 6.0, PI / 3.0)
    }

    #[test]
    fn max_entangled_is_symmetric_and_normalized() {
        let s = make_max_entangled();
        let inv_sqrt3 = 1.0 / 3.0_f64.sqrt();
        for c in s.amplitudes {
            assert!((c.re - inv_sqrt3).abs() < 1e-15);
            assert_eq!(c.im, 0.0);
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((s.amplitudes[1].norm_sqr() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn state_constructor_normalizes() {
        let s = QutritPairState::new([
            Complex64::new(3.0, 0.0),
            Complex64::new(0.0, 4.0),
            Complex64::new(0.0, 0.0),
        ])
        .unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((s.amplitudes[0].re - 0.6).abs() < 1e-15);
        assert!((s.amplitudes[1].im - 0.8).abs() < 1e-15);
        assert!(QutritPairState::new([Complex64::new(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn werner_limits() {
        let pure = make_max_entangled();
        let fully_mixed = WernerState::new(pure, 0.0).unwrap();
        assert!((werner_probability(&fully_mixed, 0.5).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let pure_limit = WernerState::new(pure, 1.0).unwrap();
        assert!((werner_probability(&pure_limit, 0.27645).unwrap() - 0.27645).abs() < 1e-15);
    }

    #[test]
    fn werner_mix_at_measured_lambda() {
        let w = WernerState::new(make_max_entangled(), 0.848).unwrap();
        assert!((werner_probability(&w, P_BRIGHT).unwrap() - 0.251316969245808).abs() < 1e-12);
    }

    #[test]
    fn werner_rejects_bad_lambda() {
        assert!(WernerState::new(make_max_entangled(), 1.2).is_err());
        assert!(WernerState::new(make_max_entangled(), -0.1).is_err());
        assert!(WernerState::new(make_max_entangled(), f64::NAN).is_err());
        let w = WernerState::new(make_max_entangled(), 0.5).unwrap();
        assert!(werner_probability(&w, 1.3).is_err());
    }

    #[test]
    fn oracle_zero_phases_gives_perfect_correlations() {
        let table = born_rule_oracle(&make_max_entangled(), &PhaseVector::ZERO, &PhaseVector::ZERO);
        for j in 0..3 {
            for k in 0..3 {
                let expect = if j == k { 1.0 / 3.0 } else { 0.0 };
                assert!(
                    (table.probs[j][k] - expect).abs() < 1e-15,
                    "P({j},{k}) = {}",
                    table.probs[j][k]
                );
            }
        }
    }

    #[test]
    fn oracle_reproduces_bell_setting_probabilities() {
        let table = born_rule_oracle(&make_max_entangled(), &PhaseVector::ZERO, &bell_b1());
        assert!((table.probs[0][0] - P_BRIGHT).abs() < 1e-12);
        assert!((table.probs[0][1] - 1.0 / 27.0).abs() < 1e-12);
        assert!((table.probs[0][2] - 0.01984808832823132).abs() < 1e-12);
    }

    #[test]
    fn oracle_tables_normalized_everywhere() {
        // scan a deterministic grid of phases; every table sums to 1 with no
        // negative entries
        for i in 0..6 {
            for m in 0..6 {
                let a = PhaseVector::new(i as f64 * 1.1 - 3.0, m as f64 * 0.7 - 2.0);
                let b = PhaseVector::new(m as f64 * 1.7 - 5.0, i as f64 * 0.3);
                let t = born_rule_oracle(&make_max_entangled(), &a, &b);
                t.validate(1e-12).unwrap();
            }
        }
    }

    #[test]
    fn symmetry_residual_detects_class_violations() {
        let uniform = JointOutcomeTable {
            probs: [[1.0 / 9.0; 3]; 3],
        };
        assert_eq!(uniform.symmetry_residual(), 0.0);
        let mut skewed = uniform;
        skewed.probs[0][0] += 0.05;
        skewed.probs[1][1] -= 0.05;
        assert!(skewed.symmetry_residual() > 0.09);
    }
}
