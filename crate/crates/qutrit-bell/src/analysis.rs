//! Measurement pipeline: arrival-time-difference histograms, coincidence
//! windowing with concurrent background estimation, fringe fitting, and the
//! final Bell report (raw and background-subtracted arms).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use crate::belltest::{i3_max, propagate_lambda_error, violation_sigma, visibility_from_lambda};
use crate::error::{Error, Result};
use crate::fit::{self, FitPoint};
use crate::montecarlo::{StepWindow, TimeTagStream};

/// Windowing parameters for histogramming and coincidence selection.
///
/// All widths in picoseconds. `background_intervals_ps` are |Δt| bands
/// (mirrored to both signs) that must sit outside the outermost peak window;
/// counts there estimate the accidental rate under the signal windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    pub bin_width_ps: f64,
    /// Histogram covers t_B − t_A in ±range_ps.
    pub range_ps: f64,
    pub window_half_width_ps: f64,
    /// Peak spacing; windows sit at {−2,−1,0,1,2}·Δτ.
    pub delta_tau_ps: f64,
    pub background_intervals_ps: Vec<(f64, f64)>,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        let delta_tau = 1200.0;
        Self {
            bin_width_ps: 50.0,
            range_ps: 3.0 * delta_tau,
            window_half_width_ps: delta_tau / 3.0,
            delta_tau_ps: delta_tau,
            background_intervals_ps: vec![(2.5 * delta_tau, 3.0 * delta_tau)],
        }
    }
}

impl HistogramSpec {
    /// Spec matched to a simulation's Δτ, windows at Δτ/3.
    pub fn for_delta_tau(delta_tau_ps: f64) -> Self {
        Self {
            bin_width_ps: 50.0,
            range_ps: 3.0 * delta_tau_ps,
            window_half_width_ps: delta_tau_ps / 3.0,
            delta_tau_ps,
            background_intervals_ps: vec![(2.5 * delta_tau_ps, 3.0 * delta_tau_ps)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bin_width_ps", self.bin_width_ps),
            ("range_ps", self.range_ps),
            ("window_half_width_ps", self.window_half_width_ps),
            ("delta_tau_ps", self.delta_tau_ps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.window_half_width_ps >= self.delta_tau_ps / 2.0 {
            return Err(Error::Config(format!(
                "window_half_width_ps = {} would overlap adjacent peaks (Δτ = {})",
                self.window_half_width_ps, self.delta_tau_ps
            )));
        }
        let outermost = 2.0 * self.delta_tau_ps + self.window_half_width_ps;
        for &(lo, hi) in &self.background_intervals_ps {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "background interval ({lo}, {hi}) must satisfy lo < hi"
                )));
            }
            if lo < outermost {
                return Err(Error::Config(format!(
                    "background interval ({lo}, {hi}) overlaps the outer peak window (ends {outermost})"
                )));
            }
        }
        if self.background_intervals_ps.is_empty() {
            return Err(Error::Config("at least one background interval required".into()));
        }
        Ok(())
    }

    /// Signal-window width divided by total background width: multiplies raw
    /// background counts into the expected accidentals under one peak window.
    pub fn background_scale(&self) -> f64 {
        let bg_width: f64 = self
            .background_intervals_ps
            .iter()
            .map(|(lo, hi)| hi - lo)
            .sum();
        self.window_half_width_ps / bg_width
    }

    fn max_reach_ps(&self) -> f64 {
        let windows = 2.0 * self.delta_tau_ps + self.window_half_width_ps;
        let bg = self
            .background_intervals_ps
            .iter()
            .fold(0.0_f64, |m, &(_, hi)| m.max(hi));
        windows.max(bg).max(self.range_ps + self.bin_width_ps)
    }
}

/// Arrival-time-difference histograms, one per (A-channel, B-channel) pair.
/// Bins are centered on integer multiples of the bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub bin_width_ps: f64,
    /// Bins span k ∈ [−half_bins, +half_bins] with center k·bin_width.
    pub half_bins: i64,
    /// Indexed [alice_output][bob_output]; bin index k + half_bins.
    pub counts: [[Vec<u64>; 3]; 3],
}

impl HistogramSet {
    pub fn n_bins(&self) -> usize {
        (2 * self.half_bins + 1) as usize
    }

    pub fn bin_center_ps(&self, idx: usize) -> f64 {
        (idx as i64 - self.half_bins) as f64 * self.bin_width_ps
    }

    /// Total counts across all pairs with |bin center − center_ps| ≤ half_width_ps.
    pub fn area_near(&self, center_ps: f64, half_width_ps: f64) -> u64 {
        let mut total = 0u64;
        for j in 0..3 {
            for k in 0..3 {
                for (idx, &c) in self.counts[j][k].iter().enumerate() {
                    if (self.bin_center_ps(idx) - center_ps).abs() <= half_width_ps {
                        total += c;
                    }
                }
            }
        }
        total
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }
}

fn ensure_sorted(stream: &TimeTagStream) -> Result<()> {
    match stream.first_unsorted() {
        Some(idx) => Err(Error::UnsortedStream(idx)),
        None => Ok(()),
    }
}

/// Single-pass two-pointer histogramming of t_B − t_A for every detector pair.
pub fn build_histogram(stream: &TimeTagStream, spec: &HistogramSpec) -> Result<HistogramSet> {
    spec.validate()?;
    ensure_sorted(stream)?;
    let half_bins = (spec.range_ps / spec.bin_width_ps).floor() as i64;
    let n_bins = (2 * half_bins + 1) as usize;
    let mut counts: [[Vec<u64>; 3]; 3] = Default::default();
    for row in counts.iter_mut() {
        for cell in row.iter_mut() {
            *cell = vec![0u64; n_bins];
        }
    }
    let reach = (spec.range_ps + 0.5 * spec.bin_width_ps).ceil() as i64;
    let recs = &stream.records;
    let mut start = 0usize;
    for (i, tag) in recs.iter().enumerate() {
        while recs[start].time_ps < tag.time_ps - reach {
            start += 1;
        }
        for other in &recs[start..i] {
            if other.channel.is_alice() == tag.channel.is_alice() {
                continue;
            }
            let (a, b) = if tag.channel.is_alice() {
                (tag, other)
            } else {
                (other, tag)
            };
            let dt = (b.time_ps - a.time_ps) as f64;
            let bin = (dt / spec.bin_width_ps).round() as i64;
            if bin.abs() <= half_bins {
                counts[a.channel.output()][b.channel.output()]
                    [(bin + half_bins) as usize] += 1;
            }
        }
    }
    Ok(HistogramSet {
        bin_width_ps: spec.bin_width_ps,
        half_bins,
        counts,
    })
}

/// Windowed coincidence counts for one scan step.
///
/// `central` holds |Δt| ≤ w; `sat_plus/minus` the ±Δτ windows;
/// `outer_plus/minus` the ±2Δτ windows; `background` the off-peak bands
/// (raw counts, unscaled). All indexed [alice_output][bob_output].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepPairCounts {
    pub step_index: usize,
    pub theta: f64,
    pub central: [[u64; 3]; 3],
    pub sat_plus: [[u64; 3]; 3],
    pub sat_minus: [[u64; 3]; 3],
    pub outer_plus: [[u64; 3]; 3],
    pub outer_minus: [[u64; 3]; 3],
    pub background: [[u64; 3]; 3],
}

/// The three (j − k) mod 3 cells of a 3×3 table.
fn class_cells(delta: usize) -> [(usize, usize); 3] {
    [0, 1, 2].map(|j| (j, (j + 3 - delta) % 3))
}

impl StepPairCounts {
    fn table_class_total(table: &[[u64; 3]; 3], delta: usize) -> u64 {
        class_cells(delta).iter().map(|&(j, k)| table[j][k]).sum()
    }

    pub fn central_class_total(&self, delta: usize) -> u64 {
        Self::table_class_total(&self.central, delta)
    }

    pub fn background_class_total(&self, delta: usize) -> u64 {
        Self::table_class_total(&self.background, delta)
    }

    pub fn central_total(&self) -> u64 {
        self.central.iter().flatten().sum()
    }

    pub fn background_total(&self) -> u64 {
        self.background.iter().flatten().sum()
    }
}

/// Per-step windowed counts for the whole run, plus the background scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FringeData {
    pub steps: Vec<StepPairCounts>,
    /// Multiplies raw background counts into expected in-window accidentals.
    pub background_scale: f64,
    pub window_half_width_ps: f64,
    pub delta_tau_ps: f64,
    /// Steps with zero central-window counts.
    pub empty_steps: Vec<usize>,
}

fn validate_manifest(manifest: &[StepWindow]) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::Config("manifest has no steps".into()));
    }
    for w in manifest {
        if w.t_end_ps <= w.t_start_ps {
            return Err(Error::Config(format!(
                "manifest step {} has empty window [{}, {})",
                w.step_index, w.t_start_ps, w.t_end_ps
            )));
        }
    }
    for pair in manifest.windows(2) {
        if pair[1].t_start_ps < pair[0].t_end_ps {
            return Err(Error::Config(format!(
                "manifest windows for steps {} and {} overlap",
                pair[0].step_index, pair[1].step_index
            )));
        }
    }
    Ok(())
}

/// Slot in `manifest` covering time `t`, or None between steps.
fn step_slot(manifest: &[StepWindow], t: i64) -> Option<usize> {
    let idx = manifest.partition_point(|w| w.t_start_ps <= t);
    if idx == 0 {
        return None;
    }
    (t < manifest[idx - 1].t_end_ps).then_some(idx - 1)
}

/// Counts per-step per-pair coincidences in the five peak windows and the
/// off-peak background bands. Pairs are attributed to the step containing
/// the A-side tag.
pub fn count_coincidences(
    stream: &TimeTagStream,
    spec: &HistogramSpec,
    manifest: &[StepWindow],
) -> Result<FringeData> {
    spec.validate()?;
    ensure_sorted(stream)?;
    validate_manifest(manifest)?;

    let mut steps: Vec<StepPairCounts> = manifest
        .iter()
        .map(|w| StepPairCounts {
            step_index: w.step_index,
            theta: w.theta,
            central: [[0; 3]; 3],
            sat_plus: [[0; 3]; 3],
            sat_minus: [[0; 3]; 3],
            outer_plus: [[0; 3]; 3],
            outer_minus: [[0; 3]; 3],
            background: [[0; 3]; 3],
        })
        .collect();

    let whw = spec.window_half_width_ps;
    let dtau = spec.delta_tau_ps;
    let reach = spec.max_reach_ps().ceil() as i64;
    let recs = &stream.records;
    let mut start = 0usize;
    for (i, tag) in recs.iter().enumerate() {
        while recs[start].time_ps < tag.time_ps - reach {
            start += 1;
        }
        for other in &recs[start..i] {
            if other.channel.is_alice() == tag.channel.is_alice() {
                continue;
            }
            let (a, b) = if tag.channel.is_alice() {
                (tag, other)
            } else {
                (other, tag)
            };
            let Some(slot) = step_slot(manifest, a.time_ps) else {
                continue;
            };
            let dt = (b.time_ps - a.time_ps) as f64;
            let (j, k) = (a.channel.output(), b.channel.output());
            let step = &mut steps[slot];
            if dt.abs() <= whw {
                step.central[j][k] += 1;
            } else if (dt - dtau).abs() <= whw {
                step.sat_plus[j][k] += 1;
            } else if (dt + dtau).abs() <= whw {
                step.sat_minus[j][k] += 1;
            } else if (dt - 2.0 * dtau).abs() <= whw {
                step.outer_plus[j][k] += 1;
            } else if (dt + 2.0 * dtau).abs() <= whw {
                step.outer_minus[j][k] += 1;
            } else {
                let abs = dt.abs();
                if spec
                    .background_intervals_ps
                    .iter()
                    .any(|&(lo, hi)| abs >= lo && abs < hi)
                {
                    step.background[j][k] += 1;
                }
            }
        }
    }

    let empty_steps = steps
        .iter()
        .filter(|s| s.central_total() == 0)
        .map(|s| s.step_index)
        .collect();
    Ok(FringeData {
        steps,
        background_scale: spec.background_scale(),
        window_half_width_ps: whw,
        delta_tau_ps: dtau,
        empty_steps,
    })
}

/// Whether the fit sees raw counts or counts with the scaled measured
/// background subtracted first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Raw,
    Net,
}

/// Fringe-fit output for one coincidence class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted contrast parameter, clamped to [0, 1.05].
    pub lambda_hat: f64,
    pub sigma_lambda: f64,
    /// Overall scale (counts per unit of the fringe shape).
    pub amplitude: f64,
    /// Fitted phase origin θ₀, wrapped to (−π, π].
    pub phase_offset: f64,
    /// Mean background subtracted per step (0 for raw fits).
    pub background: f64,
    pub chi2_per_dof: f64,
    pub phase_identifiable: bool,
    pub n_points: usize,
}

fn fit_points(
    data: &FringeData,
    cells: &[(usize, usize)],
    mode: FitMode,
) -> Result<(Vec<FitPoint>, f64)> {
    let kappa = data.background_scale;
    let mut rows = Vec::with_capacity(data.steps.len());
    let mut total = 0u64;
    let mut bg_mean = 0.0;
    for step in &data.steps {
        let c: u64 = cells.iter().map(|&(j, k)| step.central[j][k]).sum();
        let braw: u64 = cells.iter().map(|&(j, k)| step.background[j][k]).sum();
        total += c;
        let b = kappa * braw as f64;
        bg_mean += b;
        rows.push((step.theta, c as f64, b));
    }
    if total == 0 {
        return Err(Error::InsufficientData(
            "no coincidences in the central window".into(),
        ));
    }
    bg_mean /= data.steps.len().max(1) as f64;
    // Accidentals are flat in θ, so the across-step mean estimates the leak
    // under the window (and the subtraction noise) better than any single
    // step does, and it keeps the reweighting pass decoupled from point-wise
    // fluctuations.
    let extra = match mode {
        FitMode::Raw => 0.0,
        FitMode::Net => bg_mean * (1.0 + kappa),
    };
    let points = rows
        .into_iter()
        .map(|(theta, c, b)| {
            let (value, variance) = match mode {
                FitMode::Raw => (c, c.max(1.0)),
                // Var(C − κB) = Var C + κ²·Var B with Poisson B
                FitMode::Net => (c - b, c.max(1.0) + kappa * b),
            };
            FitPoint {
                theta,
                value,
                variance,
                extra_variance: extra,
            }
        })
        .collect();
    Ok((points, bg_mean))
}

fn fit_result_from(
    fit: fit::FringeModelFit,
    background: f64,
    n_points: usize,
) -> FitResult {
    FitResult {
        lambda_hat: fit.lambda,
        sigma_lambda: fit.sigma_lambda,
        amplitude: fit.scale,
        phase_offset: fit.theta0,
        background,
        chi2_per_dof: fit.chi2_per_dof,
        phase_identifiable: fit.phase_identifiable,
        n_points,
    }
}

/// Fits one coincidence class (cells with (j − k) mod 3 = `class_delta`,
/// summed) to the locked-fringe model.
pub fn fit_fringe_class(
    data: &FringeData,
    class_delta: usize,
    mode: FitMode,
) -> Result<FitResult> {
    if class_delta > 2 {
        return Err(Error::Config(format!(
            "coincidence class must be 0, 1, or 2, got {class_delta}"
        )));
    }
    let cells = class_cells(class_delta);
    let (points, bg_mean) = fit_points(data, &cells, mode)?;
    let fit = fit::fit_locked_fringe(&points, 0.0)?;
    let background = match mode {
        FitMode::Raw => 0.0,
        FitMode::Net => bg_mean,
    };
    Ok(fit_result_from(fit, background, points.len()))
}

/// The designated raw fit: coincidence class containing A0B0.
pub fn fit_fringe(data: &FringeData) -> Result<FitResult> {
    fit_fringe_class(data, 0, FitMode::Raw)
}

/// Background-subtracted twin of [`fit_fringe`].
pub fn fit_fringe_net(data: &FringeData) -> Result<FitResult> {
    fit_fringe_class(data, 0, FitMode::Net)
}

/// Independent fit of a single detector pair.
pub fn fit_pair(data: &FringeData, j: usize, k: usize, mode: FitMode) -> Result<FitResult> {
    if j > 2 || k > 2 {
        return Err(Error::Config(format!("detector pair ({j},{k}) out of range")));
    }
    let (points, bg_mean) = fit_points(data, &[(j, k)], mode)?;
    let fit = fit::fit_locked_fringe(&points, 0.0)?;
    let background = match mode {
        FitMode::Raw => 0.0,
        FitMode::Net => bg_mean,
    };
    Ok(fit_result_from(fit, background, points.len()))
}

/// Result of fitting all nine pairs independently and comparing each λ to a
/// reference value.
#[derive(Debug, Clone, Serialize)]
pub struct PairCrossCheck {
    pub lambdas: [[f64; 3]; 3],
    pub sigmas: [[f64; 3]; 3],
    /// max |λ_jk − λ_ref| / σ_jk
    pub max_sigma_deviation: f64,
    /// All nine pairs within 3σ of the reference.
    pub consistent: bool,
}

pub fn cross_check_pairs(
    data: &FringeData,
    lambda_ref: f64,
    mode: FitMode,
) -> Result<PairCrossCheck> {
    let mut lambdas = [[0.0; 3]; 3];
    let mut sigmas = [[0.0; 3]; 3];
    let mut max_dev = 0.0_f64;
    for j in 0..3 {
        for k in 0..3 {
            let fit = fit_pair(data, j, k, mode)?;
            lambdas[j][k] = fit.lambda_hat;
            sigmas[j][k] = fit.sigma_lambda;
            max_dev = max_dev.max((fit.lambda_hat - lambda_ref).abs() / fit.sigma_lambda);
        }
    }
    Ok(PairCrossCheck {
        lambdas,
        sigmas,
        max_sigma_deviation: max_dev,
        consistent: max_dev <= 3.0,
    })
}

/// One arm (raw or net) of the Bell report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BellArm {
    pub lambda: f64,
    pub sigma_lambda: f64,
    pub i3: f64,
    pub sigma_i: f64,
    pub v3: f64,
    pub sigma_v: f64,
    pub sigma_violation: f64,
    pub chi2_per_dof: f64,
    pub phase_identifiable: bool,
}

fn bell_arm(fit: &FitResult) -> Result<BellArm> {
    // λ̂ may carry fit slack above 1; the Bell value extends linearly, the
    // visibility map is evaluated at the physical clamp.
    let i3 = fit.lambda_hat * i3_max();
    let sigma_i = fit.sigma_lambda * i3_max();
    let lam_phys = fit.lambda_hat.clamp(0.0, 1.0);
    let v3 = visibility_from_lambda(3, lam_phys)?;
    let (_, sigma_v) = propagate_lambda_error(3, lam_phys, fit.sigma_lambda)?;
    let sigma_violation = violation_sigma(i3, sigma_i)?;
    Ok(BellArm {
        lambda: fit.lambda_hat,
        sigma_lambda: fit.sigma_lambda,
        i3,
        sigma_i,
        v3,
        sigma_v,
        sigma_violation,
        chi2_per_dof: fit.chi2_per_dof,
        phase_identifiable: fit.phase_identifiable,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_steps: usize,
    pub fringe_class: usize,
    pub window_half_width_ps: f64,
    pub delta_tau_ps: f64,
    pub background_scale: f64,
    pub total_central_counts: u64,
    pub total_background_counts: u64,
    pub empty_steps: Vec<usize>,
}

impl ReportMeta {
    pub fn from_data(data: &FringeData) -> Self {
        Self {
            n_steps: data.steps.len(),
            fringe_class: 0,
            window_half_width_ps: data.window_half_width_ps,
            delta_tau_ps: data.delta_tau_ps,
            background_scale: data.background_scale,
            total_central_counts: data.steps.iter().map(|s| s.central_total()).sum(),
            total_background_counts: data.steps.iter().map(|s| s.background_total()).sum(),
            empty_steps: data.empty_steps.clone(),
        }
    }
}

/// Raw and net Bell values with fit metadata; the pipeline's end product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BellReport {
    pub raw: BellArm,
    pub net: BellArm,
    pub meta: ReportMeta,
}

/// Assembles the report from a raw and a net fit.
pub fn compute_report(raw: &FitResult, net: &FitResult, meta: ReportMeta) -> Result<BellReport> {
    Ok(BellReport {
        raw: bell_arm(raw)?,
        net: bell_arm(net)?,
        meta,
    })
}

/// Runs both designated fits on counted data and assembles the report.
pub fn full_report(data: &FringeData) -> Result<BellReport> {
    let raw = fit_fringe(data)?;
    let net = fit_fringe_net(data)?;
    compute_report(&raw, &net, ReportMeta::from_data(data))
}

/// Outcome of the satellite-peak scan-rate certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SatelliteCheck {
    /// Both satellite fringes conclusive and their frequencies within 5%.
    pub pass: bool,
    /// Both spectra show a dominant peak (power ≥ 10× mean); false means
    /// the test could not certify either way (e.g. no fringes at λ = 0).
    pub conclusive: bool,
    /// Fringe frequency in the +Δτ window, cycles per radian of θ.
    pub freq_plus: f64,
    pub freq_minus: f64,
    pub power_ratio_plus: f64,
    pub power_ratio_minus: f64,
}

/// Oversampled periodogram peak of mean-subtracted counts over θ.
/// Returns (angular frequency at peak, peak power / mean power).
fn periodogram_peak(thetas: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let n = thetas.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "satellite frequency check needs ≥ 8 scan steps, got {n}"
        )));
    }
    let total: f64 = values.iter().sum();
    if total < 100.0 {
        return Err(Error::InsufficientData(format!(
            "satellite window holds only {total} counts; need ≥ 100 for frequency estimation"
        )));
    }
    let mean = total / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let mut min_spacing = f64::INFINITY;
    for w in thetas.windows(2) {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(Error::Config("scan thetas must be strictly increasing".into()));
        }
        min_spacing = min_spacing.min(d);
    }
    let omega_hi = (std::f64::consts::PI / min_spacing).min(6.0);
    let omega_lo = 0.05;
    let grid = 2048usize;
    let mut best = (omega_lo, 0.0_f64);
    let mut power_sum = 0.0;
    for g in 0..grid {
        let omega = omega_lo + (omega_hi - omega_lo) * g as f64 / (grid - 1) as f64;
        let z: Complex64 = thetas
            .iter()
            .zip(&centered)
            .map(|(&t, &v)| v * Complex64::from_polar(1.0, -omega * t))
            .sum();
        let power = z.norm_sqr();
        power_sum += power;
        if power > best.1 {
            best = (omega, power);
        }
    }
    let mean_power = power_sum / grid as f64;
    Ok((best.0, best.1 / mean_power.max(f64::MIN_POSITIVE)))
}

/// Certifies the 2:1 phase lock: the ±Δτ satellite fringes must oscillate at
/// the same rate in θ. Uses the (j − k) ≡ 0 cell sums, whose satellite
/// fringes survive summation.
pub fn verify_satellite_rate(
    stream: &TimeTagStream,
    spec: &HistogramSpec,
    manifest: &[StepWindow],
) -> Result<SatelliteCheck> {
    let data = count_coincidences(stream, spec, manifest)?;
    let thetas: Vec<f64> = data.steps.iter().map(|s| s.theta).collect();
    let cells = class_cells(0);
    let series = |pick: fn(&StepPairCounts) -> &[[u64; 3]; 3]| -> Vec<f64> {
        data.steps
            .iter()
            .map(|s| cells.iter().map(|&(j, k)| pick(s)[j][k] as f64).sum())
            .collect()
    };
    let plus = series(|s| &s.sat_plus);
    let minus = series(|s| &s.sat_minus);
    let (omega_plus, ratio_plus) = periodogram_peak(&thetas, &plus)?;
    let (omega_minus, ratio_minus) = periodogram_peak(&thetas, &minus)?;
    let conclusive = ratio_plus >= 10.0 && ratio_minus >= 10.0;
    let agree =
        (omega_plus - omega_minus).abs() <= 0.05 * omega_plus.max(omega_minus);
    let tau = 2.0 * std::f64::consts::PI;
    Ok(SatelliteCheck {
        pass: conclusive && agree,
        conclusive,
        freq_plus: omega_plus / tau,
        freq_minus: omega_minus / tau,
        power_ratio_plus: ratio_plus,
        power_ratio_minus: ratio_minus,
    })
}

/// Writes per-step per-pair central counts with scaled background:
/// `step,theta,pair,counts,background`.
pub fn write_fringe_csv(path: &Path, data: &FringeData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,theta,pair,counts,background")?;
    for step in &data.steps {
        for j in 0..3 {
            for k in 0..3 {
                writeln!(
                    w,
                    "{},{},A{}B{},{},{}",
                    step.step_index,
                    step.theta,
                    j,
                    k,
                    step.central[j][k],
                    data.background_scale * step.background[j][k] as f64,
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `pair,bin_center_ps,count`, skipping empty bins.
pub fn write_histogram_csv(path: &Path, hist: &HistogramSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "pair,bin_center_ps,count")?;
    for j in 0..3 {
        for k in 0..3 {
            for (idx, &c) in hist.counts[j][k].iter().enumerate() {
                if c > 0 {
                    writeln!(w, "A{}B{},{},{}", j, k, hist.bin_center_ps(idx), c)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(path: &Path, report: &BellReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{
        run_manifest, simulate_run, Channel, ScanPlan, SimConfig, TimeTag,
    };
    use crate::optics::fringe_prob;

    fn tags(list: &[(&str, i64)]) -> TimeTagStream {
        let mut records: Vec<TimeTag> = list
            .iter()
            .map(|&(c, t)| TimeTag {
                time_ps: t,
                channel: Channel::parse(c).unwrap(),
            })
            .collect();
        records.sort_unstable();
        TimeTagStream { records }
    }

    fn one_step_manifest(t_end: i64) -> Vec<StepWindow> {
        vec![StepWindow {
            step_index: 0,
            theta: 0.0,
            t_start_ps: 0,
            t_end_ps: t_end,
            lambda_true: 1.0,
        }]
    }

    #[test]
    fn histogram_single_pair_lands_in_bin_zero() {
        let stream = tags(&[("A0", 1000), ("B0", 1000)]);
        let hist = build_histogram(&stream, &HistogramSpec::default()).unwrap();
        assert_eq!(hist.total(), 1);
        let idx = hist.half_bins as usize; // center bin
        assert_eq!(hist.counts[0][0][idx], 1);
        assert_eq!(hist.bin_center_ps(idx), 0.0);
    }

    #[test]
    fn histogram_rejects_unsorted_stream() {
        let stream = TimeTagStream {
            records: vec![
                TimeTag { time_ps: 500, channel: Channel::A0 },
                TimeTag { time_ps: 100, channel: Channel::B0 },
            ],
        };
        assert!(matches!(
            build_histogram(&stream, &HistogramSpec::default()),
            Err(Error::UnsortedStream(1))
        ));
    }

    #[test]
    fn histogram_is_order_insensitive() {
        let config = SimConfig {
            pair_rate: 2.0e4,
            duration_per_step: 0.01,
            scan: ScanPlan { n_steps: 3, theta_max: 1.0, long_rate: 2.0 },
            ..SimConfig::default()
        };
        let (stream, _) = simulate_run(&config).unwrap();
        let h1 = build_histogram(&stream, &HistogramSpec::default()).unwrap();
        let mut shuffled = stream.records.clone();
        shuffled.reverse();
        shuffled.sort_unstable();
        let h2 = build_histogram(&TimeTagStream { records: shuffled }, &HistogramSpec::default())
            .unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn spec_validation_rejects_overlapping_windows() {
        let mut spec = HistogramSpec::default();
        spec.window_half_width_ps = 700.0; // ≥ Δτ/2
        assert!(spec.validate().is_err());
        let mut spec = HistogramSpec::default();
        spec.background_intervals_ps = vec![(2000.0, 2600.0)]; // touches outer peak
        assert!(spec.validate().is_err());
        assert!(HistogramSpec::default().validate().is_ok());
    }

    #[test]
    fn counting_classifies_windows_and_background() {
        // Δτ = 1200, w = 400: central pairs at |dt| ≤ 400, satellite at
        // 1200 ± 400, background band |dt| ∈ [3000, 3600)
        let stream = tags(&[
            ("A0", 1_000),
            ("B0", 1_200), // dt = +200 → central
            ("A1", 50_000),
            ("B2", 49_700), // dt = −300 → central
            ("A2", 90_000),
            ("B1", 90_390), // central
            ("A0", 200_000),
            ("B0", 201_200), // dt = +1200 → satellite +
            ("A1", 300_000),
            ("B1", 298_850), // dt = −1150 → satellite −
            ("A0", 400_000),
            ("B0", 403_200), // dt = +3200 → background
            ("A0", 500_000),
            ("B0", 505_000), // beyond all windows → ignored
        ]);
        let data =
            count_coincidences(&stream, &HistogramSpec::default(), &one_step_manifest(1_000_000))
                .unwrap();
        let step = &data.steps[0];
        assert_eq!(step.central_total(), 3);
        assert_eq!(step.central[0][0], 1);
        assert_eq!(step.central[1][2], 1);
        assert_eq!(step.central[2][1], 1);
        assert_eq!(step.sat_plus[0][0], 1);
        assert_eq!(step.sat_minus[1][1], 1);
        assert_eq!(step.background_total(), 1);
        assert!(data.empty_steps.is_empty());
        // κ = 400 / 600
        assert!((data.background_scale - 400.0 / 600.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_is_flagged_and_unfittable() {
        let stream = TimeTagStream::default();
        let data =
            count_coincidences(&stream, &HistogramSpec::default(), &one_step_manifest(1_000))
                .unwrap();
        assert_eq!(data.empty_steps, vec![0]);
        assert!(matches!(
            fit_fringe(&data),
            Err(Error::InsufficientData(_))
        ));
    }

    /// FringeData built directly from the closed-form fringe, counts scaled
    /// large so integer rounding is negligible.
    fn synthetic_data(lambda: f64, n_steps: usize, scale: f64) -> FringeData {
        let steps = (0..n_steps)
            .map(|i| {
                let theta =
                    2.0 * std::f64::consts::PI * i as f64 / (n_steps - 1) as f64;
                let mut central = [[0u64; 3]; 3];
                for j in 0..3 {
                    for k in 0..3 {
                        let p = fringe_prob(lambda, theta, j, k).unwrap();
                        central[j][k] = (scale * p).round() as u64;
                    }
                }
                StepPairCounts {
                    step_index: i,
                    theta,
                    central,
                    sat_plus: [[0; 3]; 3],
                    sat_minus: [[0; 3]; 3],
                    outer_plus: [[0; 3]; 3],
                    outer_minus: [[0; 3]; 3],
                    background: [[0; 3]; 3],
                }
            })
            .collect();
        FringeData {
            steps,
            background_scale: 1.0,
            window_half_width_ps: 400.0,
            delta_tau_ps: 1200.0,
            empty_steps: vec![],
        }
    }

    #[test]
    fn noiseless_class_fit_recovers_lambda() {
        let data = synthetic_data(0.9, 25, 3.0e9);
        let fit = fit_fringe(&data).unwrap();
        assert!(
            (fit.lambda_hat - 0.9).abs() < 5.0e-6,
            "λ̂ = {}",
            fit.lambda_hat
        );
        assert!(fit.phase_identifiable);
        assert_eq!(fit.background, 0.0);
        // θ₀ = 0 for the class containing A0B0
        assert!(fit.phase_offset.abs() < 1e-4, "θ₀ = {}", fit.phase_offset);
    }

    #[test]
    fn class_maxima_are_separated_by_two_pi_thirds() {
        let data = synthetic_data(0.848, 25, 3.0e9);
        let f0 = fit_fringe_class(&data, 0, FitMode::Raw).unwrap();
        let f1 = fit_fringe_class(&data, 1, FitMode::Raw).unwrap();
        let f2 = fit_fringe_class(&data, 2, FitMode::Raw).unwrap();
        let third = 2.0 * std::f64::consts::PI / 3.0;
        let wrap = |x: f64| {
            let mut y = x % (2.0 * std::f64::consts::PI);
            if y > std::f64::consts::PI {
                y -= 2.0 * std::f64::consts::PI;
            }
            if y <= -std::f64::consts::PI {
                y += 2.0 * std::f64::consts::PI;
            }
            y
        };
        assert!(wrap(f1.phase_offset - f0.phase_offset - third).abs() < 1e-3);
        assert!(wrap(f2.phase_offset - f1.phase_offset - third).abs() < 1e-3);
    }

    #[test]
    fn per_pair_fits_agree_with_class_fit() {
        let data = synthetic_data(0.7, 25, 3.0e9);
        for j in 0..3 {
            for k in 0..3 {
                let fit = fit_pair(&data, j, k, FitMode::Raw).unwrap();
                assert!(
                    (fit.lambda_hat - 0.7).abs() < 1e-4,
                    "pair ({j},{k}) λ̂ = {}",
                    fit.lambda_hat
                );
            }
        }
    }

    #[test]
    fn report_reproduces_reference_rows() {
        let fit_at = |lambda: f64| FitResult {
            lambda_hat: lambda,
            sigma_lambda: 0.008,
            amplitude: 1.0,
            phase_offset: 0.0,
            background: 0.0,
            chi2_per_dof: 1.0,
            phase_identifiable: true,
            n_points: 25,
        };
        let raw = fit_at(0.848);
        let net = fit_at(0.969);
        let meta = ReportMeta {
            n_steps: 25,
            fringe_class: 0,
            window_half_width_ps: 400.0,
            delta_tau_ps: 1200.0,
            background_scale: 2.0 / 3.0,
            total_central_counts: 0,
            total_background_counts: 0,
            empty_steps: vec![],
        };
        let report = compute_report(&raw, &net, meta).unwrap();
        let round3 = |x: f64| (x * 1000.0).round() / 1000.0;
        assert_eq!(round3(report.raw.i3), 2.436);
        assert_eq!(round3(report.raw.sigma_i), 0.023);
        assert_eq!(round3(report.raw.v3), 0.893);
        assert_eq!(round3(report.raw.sigma_v), 0.006);
        assert_eq!(report.raw.sigma_violation.round(), 19.0);
        assert_eq!(round3(report.net.i3), 2.784);
        assert_eq!(round3(report.net.v3), 0.979);
        assert_eq!(report.net.sigma_violation.round(), 34.0);
    }

    fn desk_run(lambda: f64, seed: u64) -> (FringeData, SimConfig) {
        let config = SimConfig {
            pair_rate: 7.0e5,
            duration_per_step: 0.01,
            efficiency_a: 0.2,
            efficiency_b: 0.2,
            dark_rate_per_detector: 3.0e5,
            lambda_true: lambda,
            seed,
            ..SimConfig::default()
        };
        let (stream, _) = simulate_run(&config).unwrap();
        let manifest = run_manifest(&config).unwrap();
        let spec = HistogramSpec::for_delta_tau(config.delta_tau_ps);
        let data = count_coincidences(&stream, &spec, &manifest).unwrap();
        (data, config)
    }

    #[test]
    fn background_subtraction_raises_contrast() {
        let (data, config) = desk_run(0.848, 5);
        let report = full_report(&data).unwrap();
        assert!(
            report.net.lambda > report.raw.lambda,
            "raw {} vs net {}",
            report.raw.lambda,
            report.net.lambda
        );
        assert!(
            (report.net.lambda - config.lambda_true).abs() < 0.1,
            "net λ̂ = {}",
            report.net.lambda
        );
        assert!(report.meta.total_background_counts > 0);
        assert!(report.net.sigma_lambda > 0.0);
    }

    #[test]
    fn satellite_certification_distinguishes_locked_from_broken() {
        let base = SimConfig {
            pair_rate: 2.0e5,
            duration_per_step: 0.02,
            efficiency_a: 0.35,
            efficiency_b: 0.35,
            dark_rate_per_detector: 0.0,
            lambda_true: 0.9,
            scan: ScanPlan {
                n_steps: 48,
                theta_max: 6.0 * std::f64::consts::PI,
                long_rate: 2.0,
            },
            seed: 17,
            ..SimConfig::default()
        };
        let spec = HistogramSpec::for_delta_tau(base.delta_tau_ps);
        let check_of = |config: &SimConfig| {
            let (stream, _) = simulate_run(config).unwrap();
            let manifest = run_manifest(config).unwrap();
            verify_satellite_rate(&stream, &spec, &manifest).unwrap()
        };

        let locked = check_of(&base);
        assert!(locked.conclusive, "{locked:?}");
        assert!(locked.pass, "{locked:?}");
        // fringe advances once per 2π of θ in both windows
        assert!((locked.freq_plus - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 0.01);

        let mut broken = base.clone();
        broken.scan.long_rate = 1.5;
        let b = check_of(&broken);
        assert!(b.conclusive, "{b:?}");
        assert!(!b.pass, "{b:?}");
        // the two windows disagree by ~2×
        let ratio = b.freq_plus.max(b.freq_minus) / b.freq_plus.min(b.freq_minus);
        assert!((ratio - 2.0).abs() < 0.2, "{b:?}");

        let mut flat = base.clone();
        flat.lambda_true = 0.0;
        let f = check_of(&flat);
        assert!(!f.conclusive, "{f:?}");
        assert!(!f.pass, "{f:?}");
    }

    #[test]
    fn writers_emit_expected_headers() {
        let (data, _) = desk_run(0.848, 9);
        let report = full_report(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let fringe_path = dir.path().join("fringe.csv");
        write_fringe_csv(&fringe_path, &data).unwrap();
        let text = std::fs::read_to_string(&fringe_path).unwrap();
        assert!(text.starts_with("step,theta,pair,counts,background\n"));
        assert_eq!(text.lines().count(), 1 + 9 * data.steps.len());

        let report_path = dir.path().join("report.json");
        write_report_json(&report_path, &report).unwrap();
        let back: BellReport =
            serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
        assert!((back.net.lambda - report.net.lambda).abs() < 1e-12);

        let stream = tags(&[("A0", 1000), ("B0", 1000)]);
        let hist = build_histogram(&stream, &HistogramSpec::default()).unwrap();
        let hist_path = dir.path().join("hist.csv");
        write_histogram_csv(&hist_path, &hist).unwrap();
        let text = std::fs::read_to_string(&hist_path).unwrap();
        assert_eq!(text, "pair,bin_center_ps,count\nA0B0,0,1\n");
    }
}
