//! Closed-form model of the two three-arm interferometers.
//!
//! Coincidences sort into five arrival-time-difference classes (offsets
//! −2Δτ … +2Δτ) by which path each photon took. The central class is where
//! all three path pairs interfere — the qutrit measurement — while the ±Δτ
//! satellites carry two-path fringes used to certify the 2:1 phase lock.
//! [`peak_joint_distribution`] packages the whole law; the narrower closed
//! forms ([`central_coincidence_prob`], [`fringe_prob`],
//! [`satellite_fringe_prob`]) are special cases of it and are cross-checked
//! against the Born-rule oracle in `quantum`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_lambda, check_output_index, Error, Result};
use crate::quantum::QutritPairState;

/// One party's interferometer phases, radians. The short arm is the phase
/// reference and is fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseVector {
    pub medium: f64,
    pub long: f64,
}

impl PhaseVector {
    pub const ZERO: Self = Self {
        medium: 0.0,
        long: 0.0,
    };

    pub fn new(medium: f64, long: f64) -> Self {
        Self { medium, long }
    }

    /// Phase pair obeying the scan lock long = 2·medium.
    pub fn locked(theta: f64) -> Self {
        Self {
            medium: theta,
            long: 2.0 * theta,
        }
    }

    /// Element-wise sum; the physics only ever sees α + β.
    pub fn sum(self, other: Self) -> Self {
        Self {
            medium: self.medium + other.medium,
            long: self.long + other.long,
        }
    }

    /// Whether long = 2·medium within `tol`.
    pub fn is_locked(&self, tol: f64) -> bool {
        (self.long - 2.0 * self.medium).abs() <= tol
    }
}

/// Power splitting ratios of one 3×3 coupler, indexed (short, medium, long).
///
/// Invariant: entries non-negative and summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplerRatios {
    pub split: [f64; 3],
}

impl CouplerRatios {
    pub const IDEAL: Self = Self {
        split: [1.0 / 3.0; 3],
    };

    /// Validates (non-negative, finite, total within 1e-9 of 1) and stores
    /// the ratios renormalized to an exact unit sum.
    pub fn new(split: [f64; 3]) -> Result<Self> {
        for &r in &split {
            if !r.is_finite() {
                return Err(Error::CouplerRatios(split, "non-finite entry"));
            }
            if r < 0.0 {
                return Err(Error::CouplerRatios(split, "negative entry"));
            }
        }
        let total: f64 = split.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::CouplerRatios(split, "entries must sum to 1"));
        }
        Ok(Self {
            split: split.map(|r| r / total),
        })
    }
}

/// Which (alice_path, bob_path) combinations land at each arrival-time
/// offset. Offsets are in units of Δτ; paths are 0=short, 1=medium, 2=long,
/// and a pair sits at offset bob_path − alice_path.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakStructure {
    pub offsets: [i8; 5],
    pub contributing_paths: [Vec<(usize, usize)>; 5],
}

impl PeakStructure {
    pub fn multiplicities(&self) -> [usize; 5] {
        let mut m = [0; 5];
        for (i, paths) in self.contributing_paths.iter().enumerate() {
            m[i] = paths.len();
        }
        m
    }

    /// Path pairs contributing at `offset` ∈ {−2,…,+2}.
    pub fn paths_at(&self, offset: i8) -> &[(usize, usize)] {
        &self.contributing_paths[(offset + 2) as usize]
    }
}

/// The five-peak combinatorics: 9 path pairs grouped by path-length
/// difference, multiplicities 1:2:3:2:1.
pub fn peak_structure() -> PeakStructure {
    let mut contributing: [Vec<(usize, usize)>; 5] = Default::default();
    for a in 0..3usize {
        for b in 0..3usize {
            let offset = b as i8 - a as i8;
            contributing[(offset + 2) as usize].push((a, b));
        }
    }
    PeakStructure {
        offsets: [-2, -1, 0, 1, 2],
        contributing_paths: contributing,
    }
}

/// Detector phase offset 2π·a·(j−k)/3 for path index a.
fn tritter_phase(a: usize, j: usize, k: usize) -> f64 {
    2.0 * PI * a as f64 * (j as f64 - k as f64) / 3.0
}

/// Central-peak coincidence probability for detector outputs (j,k):
///
///   P = (1/27)·[3 + 2λ(cos Θ_m + cos Θ_l + cos(Θ_m − Θ_l))],
///
/// with Θ_m = α_m+β_m+φ¹_{jk}, Θ_l = α_l+β_l+φ²_{jk},
/// φᵃ_{jk} = 2πa(j−k)/3. Normalized so the 9 outcomes sum to 1.
pub fn central_coincidence_prob(
    lambda: f64,
    alice: &PhaseVector,
    bob: &PhaseVector,
    j: usize,
    k: usize,
) -> Result<f64> {
    check_lambda(lambda)?;
    check_output_index(j)?;
    check_output_index(k)?;
    let theta_m = alice.medium + bob.medium + tritter_phase(1, j, k);
    let theta_l = alice.long + bob.long + tritter_phase(2, j, k);
    let interference = theta_m.cos() + theta_l.cos() + (theta_m - theta_l).cos();
    Ok((3.0 + 2.0 * lambda * interference) / 27.0)
}

/// Central-peak probability along the 2:1-locked scan: α_m+β_m = θ and
/// α_l+β_l = 2θ. For j=k this is (1/27)[3 + 2λ(2cos θ + cos 2θ)].
pub fn fringe_prob(lambda: f64, theta: f64, j: usize, k: usize) -> Result<f64> {
    central_coincidence_prob(lambda, &PhaseVector::locked(theta), &PhaseVector::ZERO, j, k)
}

/// Satellite-peak coincidence probability for offset ±1 and detector outputs
/// (j,k), with ideal couplers: the joint probability per detected
/// coincidence (all five offset classes and nine outcomes sum to 1),
///
///   P = (2/81)·(1 + λ·cos Φ),
///   Φ₊ = α_m + β_l − β_m + 2π(j−k)/3    (offset +1: paths (s,m),(m,l))
///   Φ₋ = α_l + β_m − α_m + 2π(j−k)/3    (offset −1: paths (m,s),(l,m))
///
/// Under the 2:1 lock both Φ's advance at dθ — the equal-rate signature that
/// certifies the lock; scanning α_l alone leaves Φ₊ constant while Φ₋
/// oscillates.
pub fn satellite_fringe_prob(
    lambda: f64,
    alice: &PhaseVector,
    bob: &PhaseVector,
    offset: i64,
    j: usize,
    k: usize,
) -> Result<f64> {
    check_lambda(lambda)?;
    check_output_index(j)?;
    check_output_index(k)?;
    let detector = 2.0 * PI * (j as f64 - k as f64) / 3.0;
    let phi = match offset {
        1 => alice.medium + bob.long - bob.medium + detector,
        -1 => alice.long + bob.medium - alice.medium + detector,
        other => return Err(Error::SatelliteOffset(other)),
    };
    Ok(2.0 / 81.0 * (1.0 + lambda * phi.cos()))
}

/// Post-selected path-pair amplitudes from four independent coupler passes:
/// c_a ∝ √(inA_a · outA_a · inB_a · outB_a), renormalized.
pub fn path_amplitudes_from_passes(
    in_a: &CouplerRatios,
    out_a: &CouplerRatios,
    in_b: &CouplerRatios,
    out_b: &CouplerRatios,
) -> Result<QutritPairState> {
    let mut amps = [Complex64::new(0.0, 0.0); 3];
    for path in 0..3 {
        let power =
            in_a.split[path] * out_a.split[path] * in_b.split[path] * out_b.split[path];
        amps[path] = Complex64::new(power.sqrt(), 0.0);
    }
    QutritPairState::new(amps)
}

/// Path-pair amplitudes when each interferometer reuses one physical coupler
/// for its input and output pass: c_a ∝ A_a · B_a, renormalized.
pub fn path_amplitudes(
    couplers_a: &CouplerRatios,
    couplers_b: &CouplerRatios,
) -> Result<QutritPairState> {
    path_amplitudes_from_passes(couplers_a, couplers_a, couplers_b, couplers_b)
}

/// Full coincidence law over the five offset classes and nine detector
/// outcomes, for one phase setting.
///
/// With per-path pair weight m_ab = √(inA_a·outA_a)·√(inB_b·outB_b) (here
/// the same coupler serves both passes per interferometer, so
/// m_ab = A_a·B_b), the unnormalized joint density is
///
///   q(n,j,k) = λ·(1/9)·|Σ_{(a,b)∈Sₙ} m_ab e^{i(α_a+β_b)} e^{2πi(aj−bk)/3}|²
///            + (1−λ)·(1/9)·Σ_{(a,b)∈Sₙ} m_ab²,
///
/// where Sₙ is the path-pair set at offset n. Class weights come out exactly
/// phase- and λ-independent (Σ_{Sₙ}m²/Σm² — 1:2:3:2:1 for ideal couplers),
/// and the central-class conditional reduces to [`central_coincidence_prob`].
#[derive(Debug, Clone, PartialEq)]
pub struct PeakJointDistribution {
    /// Probability that a coincidence lands at offset class n (index n+2).
    pub class_weights: [f64; 5],
    /// P(j,k | class), one normalized 3×3 table per class.
    pub class_outcomes: [[[f64; 3]; 3]; 5],
    /// P(path pair | class); entries parallel
    /// `peak_structure().contributing_paths`. Independent of the detector
    /// outcome in this model (only used for absolute timing, which the
    /// undefined emission time makes unobservable anyway).
    pub class_path_weights: [Vec<f64>; 5],
}

pub fn peak_joint_distribution(
    lambda: f64,
    alice: &PhaseVector,
    bob: &PhaseVector,
    couplers_a: &CouplerRatios,
    couplers_b: &CouplerRatios,
) -> Result<PeakJointDistribution> {
    check_lambda(lambda)?;
    let alpha = [0.0, alice.medium, alice.long];
    let beta = [0.0, bob.medium, bob.long];
    let structure = peak_structure();

    let mut class_weights = [0.0_f64; 5];
    let mut class_outcomes = [[[0.0_f64; 3]; 3]; 5];
    let mut class_path_weights: [Vec<f64>; 5] = Default::default();
    let mut total_weight = 0.0_f64;

    for (ci, paths) in structure.contributing_paths.iter().enumerate() {
        let weights: Vec<f64> = paths
            .iter()
            .map(|&(a, b)| {
                let m = couplers_a.split[a] * couplers_b.split[b];
                m * m
            })
            .collect();
        let class_power: f64 = weights.iter().sum();
        total_weight += class_power;
        class_weights[ci] = class_power;
        class_path_weights[ci] = weights.iter().map(|w| w / class_power).collect();

        for j in 0..3 {
            for k in 0..3 {
                let mut amp = Complex64::new(0.0, 0.0);
                for &(a, b) in paths {
                    let m = couplers_a.split[a] * couplers_b.split[b];
                    let phase = alpha[a]
                        + beta[b]
                        + 2.0 * PI * (a as f64 * j as f64 - b as f64 * k as f64) / 3.0;
                    amp += m * Complex64::from_polar(1.0, phase);
                }
                let coherent = amp.norm_sqr() / 9.0;
                let incoherent = class_power / 9.0;
                // conditional on the class: divide by the class's own total
                class_outcomes[ci][j][k] =
                    (lambda * coherent + (1.0 - lambda) * incoherent) / class_power;
            }
        }
    }
    for w in &mut class_weights {
        *w /= total_weight;
    }
    Ok(PeakJointDistribution {
        class_weights,
        class_outcomes,
        class_path_weights,
    })
}
