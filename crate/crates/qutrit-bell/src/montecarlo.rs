//! Forward simulation of the experiment into detection time-tag streams.
//!
//! Each scan step draws photon pairs at Poisson times, samples every pair's
//! (offset class, detector outputs, path pair) from the joint law in
//! [`crate::optics::peak_joint_distribution`], thins by detector efficiency,
//! adds Gaussian timing jitter and per-channel dark counts, and quantizes to
//! integer picoseconds. Steps use independent RNG substreams derived from
//! (seed, step index), so the parallel and sequential drivers produce
//! bit-identical streams after the final (time, channel) sort.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use crate::belltest::optimal_settings;
use crate::error::{Error, Result};
use crate::exec;
use crate::optics::{
    peak_joint_distribution, peak_structure, CouplerRatios, PeakJointDistribution, PhaseVector,
};

/// Detector channels: party A or B, tritter output 0, 1, or 2.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Channel {
    A0,
    A1,
    A2,
    B0,
    B1,
    B2,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::A0,
        Channel::A1,
        Channel::A2,
        Channel::B0,
        Channel::B1,
        Channel::B2,
    ];

    pub fn alice(output: usize) -> Channel {
        Self::ALL[output]
    }

    pub fn bob(output: usize) -> Channel {
        Self::ALL[3 + output]
    }

    pub fn is_alice(self) -> bool {
        matches!(self, Channel::A0 | Channel::A1 | Channel::A2)
    }

    /// Tritter output index 0..3.
    pub fn output(self) -> usize {
        match self {
            Channel::A0 | Channel::B0 => 0,
            Channel::A1 | Channel::B1 => 1,
            Channel::A2 | Channel::B2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::A0 => "A0",
            Channel::A1 => "A1",
            Channel::A2 => "A2",
            Channel::B0 => "B0",
            Channel::B1 => "B1",
            Channel::B2 => "B2",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One detection record. Field order gives the sort key (time, channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub time_ps: i64,
    pub channel: Channel,
}

/// Time-sorted detection records; the simulator/analyzer wire format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeTagStream {
    pub records: Vec<TimeTag>,
}

impl TimeTagStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the first out-of-order record, if any.
    pub fn first_unsorted(&self) -> Option<usize> {
        self.records
            .windows(2)
            .position(|w| w[1].time_ps < w[0].time_ps)
            .map(|i| i + 1)
    }

    /// Writes the `channel,time_ps` CSV.
    pub fn write_csv<W: IoWrite>(&self, mut w: W) -> Result<()> {
        writeln!(w, "channel,time_ps")?;
        for tag in &self.records {
            writeln!(w, "{},{}", tag.channel, tag.time_ps)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV, reporting malformed content with 1-based line numbers
    /// and enforcing non-decreasing timestamps.
    pub fn read_csv<R: BufRead>(r: R, source: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(header))) if header.trim_end() == "channel,time_ps" => {}
            Some((_, Ok(header))) => {
                return Err(parse_err(
                    1,
                    format!("expected header 'channel,time_ps', found '{header}'"),
                ))
            }
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(parse_err(1, "empty file, expected CSV header".into())),
        }
        let mut records = Vec::new();
        let mut last_time = i64::MIN;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim_end();
            if trimmed.is_empty() {
                continue;
            }
            let (chan_str, time_str) = trimmed
                .split_once(',')
                .ok_or_else(|| parse_err(line_no, format!("expected 'channel,time_ps', found '{trimmed}'")))?;
            let channel = Channel::parse(chan_str)
                .ok_or_else(|| parse_err(line_no, format!("unknown channel '{chan_str}'")))?;
            let time_ps: i64 = time_str
                .trim()
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad timestamp '{time_str}': {e}")))?;
            if time_ps < last_time {
                return Err(parse_err(
                    line_no,
                    format!("timestamps must be non-decreasing ({time_ps} after {last_time})"),
                ));
            }
            last_time = time_ps;
            records.push(TimeTag { time_ps, channel });
        }
        Ok(Self { records })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Self::read_csv(r, &path.display().to_string())
    }
}

/// One scan step: the scan coordinate θ and the actual phase settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanStep {
    pub theta: f64,
    pub alice: PhaseVector,
    pub bob: PhaseVector,
}

/// The locked scan: Alice sweeps (θ, 2θ) over `n_steps` points even in
/// [0, theta_max]; Bob holds the first optimal setting.
pub fn scan_schedule(n_steps: usize, theta_max: f64) -> Result<Vec<ScanStep>> {
    scan_schedule_with_long_rate(n_steps, theta_max, 2.0)
}

/// Scan with an arbitrary long-arm rate: Alice sweeps (θ, rate·θ).
/// rate = 2 is the locked schedule; other rates deliberately break the lock
/// (for certification tests).
pub fn scan_schedule_with_long_rate(
    n_steps: usize,
    theta_max: f64,
    long_rate: f64,
) -> Result<Vec<ScanStep>> {
    if n_steps < 2 {
        return Err(Error::Config(format!(
            "scan needs at least 2 steps, got {n_steps}"
        )));
    }
    if !(theta_max >= 0.0) || !long_rate.is_finite() {
        return Err(Error::Config("scan bounds must be finite, theta_max >= 0".into()));
    }
    let bob = optimal_settings().b1;
    Ok((0..n_steps)
        .map(|i| {
            let theta = theta_max * i as f64 / (n_steps - 1) as f64;
            ScanStep {
                theta,
                alice: PhaseVector::new(theta, long_rate * theta),
                bob,
            }
        })
        .collect())
}

/// Compact scan description stored in configs; expands via
/// [`scan_schedule_with_long_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPlan {
    pub n_steps: usize,
    pub theta_max: f64,
    /// Long-arm phase rate; 2.0 is the locked scan.
    pub long_rate: f64,
}

impl Default for ScanPlan {
    fn default() -> Self {
        Self {
            n_steps: 25,
            theta_max: 2.0 * std::f64::consts::PI,
            long_rate: 2.0,
        }
    }
}

impl ScanPlan {
    pub fn steps(&self) -> Result<Vec<ScanStep>> {
        scan_schedule_with_long_rate(self.n_steps, self.theta_max, self.long_rate)
    }
}

/// Full simulation parameterization; the JSON config schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Photon pairs per second.
    pub pair_rate: f64,
    /// Seconds per scan step.
    pub duration_per_step: f64,
    /// Path-length step Δτ in ps.
    pub delta_tau_ps: f64,
    /// Detector timing jitter σ in ps.
    pub jitter_sigma_ps: f64,
    pub efficiency_a: f64,
    pub efficiency_b: f64,
    /// Dark counts per second per detector.
    pub dark_rate_per_detector: f64,
    /// Werner admixture: with probability 1−λ a pair's path pair is drawn
    /// from the classical weights and its detector outcome uniformly.
    pub lambda_true: f64,
    pub couplers_a: CouplerRatios,
    pub couplers_b: CouplerRatios,
    pub scan: ScanPlan,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pair_rate: 1.0e4,
            duration_per_step: 10.0,
            delta_tau_ps: 1200.0,
            jitter_sigma_ps: 100.0,
            efficiency_a: 0.1,
            efficiency_b: 0.1,
            dark_rate_per_detector: 100.0,
            lambda_true: 0.848,
            couplers_a: CouplerRatios::IDEAL,
            couplers_b: CouplerRatios::IDEAL,
            scan: ScanPlan::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Desk-scale preset sized for the closed-loop statistical tests:
    /// short bright steps, strong dark-count background (~16% of the central
    /// window) so raw and net fits separate cleanly.
    pub fn closed_loop_preset() -> Self {
        Self {
            pair_rate: 1.4e6,
            duration_per_step: 0.04,
            efficiency_a: 0.2,
            efficiency_b: 0.2,
            dark_rate_per_detector: 6.0e5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_per_step", self.duration_per_step),
            ("delta_tau_ps", self.delta_tau_ps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("pair_rate", self.pair_rate),
            ("jitter_sigma_ps", self.jitter_sigma_ps),
            ("dark_rate_per_detector", self.dark_rate_per_detector),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("efficiency_a", self.efficiency_a), ("efficiency_b", self.efficiency_b)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_true) {
            return Err(Error::Config(format!(
                "lambda_true must be in [0,1], got {}",
                self.lambda_true
            )));
        }
        // peaks must stay separable
        if self.delta_tau_ps <= 5.0 * self.jitter_sigma_ps {
            return Err(Error::Config(format!(
                "delta_tau_ps = {} must exceed 5x jitter_sigma_ps = {} or the peaks merge",
                self.delta_tau_ps, self.jitter_sigma_ps
            )));
        }
        self.scan.steps().map(|_| ())
    }

    /// Nominal step window in integer ps.
    pub fn step_window_ps(&self) -> i64 {
        (self.duration_per_step * 1e12).round() as i64
    }
}

/// Per-step ground truth for closed-loop testing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTruth {
    pub step_index: usize,
    pub theta: f64,
    pub alice: PhaseVector,
    pub bob: PhaseVector,
    pub lambda_true: f64,
    /// Probability of each offset class {−2,…,+2}.
    pub class_weights: [f64; 5],
    /// Detector-outcome distribution conditional on each class; each table
    /// sums to 1.
    pub class_outcomes: [[[f64; 3]; 3]; 5],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TruthRecord {
    pub steps: Vec<StepTruth>,
}

/// One step boundary in the sidecar manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepWindow {
    pub step_index: usize,
    pub theta: f64,
    pub t_start_ps: i64,
    pub t_end_ps: i64,
    pub lambda_true: f64,
}

/// Nominal step windows for a config (what `simulate` writes alongside the
/// tag stream).
pub fn run_manifest(config: &SimConfig) -> Result<Vec<StepWindow>> {
    config.validate()?;
    let window = config.step_window_ps();
    Ok(config
        .scan
        .steps()?
        .iter()
        .enumerate()
        .map(|(i, step)| StepWindow {
            step_index: i,
            theta: step.theta,
            t_start_ps: i as i64 * window,
            t_end_ps: (i as i64 + 1) * window,
            lambda_true: config.lambda_true,
        })
        .collect())
}

pub fn write_manifest(path: &Path, manifest: &[StepWindow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<StepWindow>> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Cumulative table for sampling (class, j, k) cells of the joint law.
struct JointSampler {
    cumulative: Vec<(f64, usize, usize, usize)>,
    path_cumulative: [Vec<f64>; 5],
    paths: [Vec<(usize, usize)>; 5],
}

impl JointSampler {
    fn new(joint: &PeakJointDistribution) -> Self {
        let mut cumulative = Vec::with_capacity(45);
        let mut acc = 0.0;
        for ci in 0..5 {
            for j in 0..3 {
                for k in 0..3 {
                    acc += joint.class_weights[ci] * joint.class_outcomes[ci][j][k];
                    cumulative.push((acc, ci, j, k));
                }
            }
        }
        // guard against rounding at the tail
        cumulative.last_mut().expect("non-empty").0 = f64::INFINITY;
        let structure = peak_structure();
        let mut path_cumulative: [Vec<f64>; 5] = Default::default();
        for ci in 0..5 {
            let mut acc = 0.0;
            path_cumulative[ci] = joint.class_path_weights[ci]
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect();
        }
        Self {
            cumulative,
            path_cumulative,
            paths: structure.contributing_paths,
        }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> (usize, usize, usize, (usize, usize)) {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&(c, ..)| c < u);
        let (_, ci, j, k) = self.cumulative[idx.min(self.cumulative.len() - 1)];
        let pair = if self.paths[ci].len() == 1 {
            self.paths[ci][0]
        } else {
            let v: f64 = rng.random();
            let pi = self.path_cumulative[ci].partition_point(|&c| c < v);
            self.paths[ci][pi.min(self.paths[ci].len() - 1)]
        };
        (ci, j, k, pair)
    }
}

fn poisson_count(rng: &mut ChaCha12Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

fn simulate_step(config: &SimConfig, step_index: usize, step: &ScanStep) -> (Vec<TimeTag>, StepTruth) {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(step_index as u64);

    let joint = peak_joint_distribution(
        config.lambda_true,
        &step.alice,
        &step.bob,
        &config.couplers_a,
        &config.couplers_b,
    )
    .expect("validated config");
    let sampler = JointSampler::new(&joint);

    let window_ps = config.step_window_ps();
    let t_start = step_index as i64 * window_ps;
    let jitter = (config.jitter_sigma_ps > 0.0)
        .then(|| Normal::new(0.0, config.jitter_sigma_ps).expect("finite sigma"));
    let draw_jitter = |rng: &mut ChaCha12Rng| jitter.map_or(0.0, |n| n.sample(rng));

    let mut tags = Vec::new();
    let n_pairs = poisson_count(&mut rng, config.pair_rate * config.duration_per_step);
    for _ in 0..n_pairs {
        let t0 = t_start as f64 + rng.random_range(0.0..window_ps as f64);
        let (_ci, j, k, (path_a, path_b)) = sampler.sample(&mut rng);
        if rng.random_bool(config.efficiency_a) {
            let t = t0 + path_a as f64 * config.delta_tau_ps + draw_jitter(&mut rng);
            tags.push(TimeTag {
                time_ps: t.round() as i64,
                channel: Channel::alice(j),
            });
        }
        if rng.random_bool(config.efficiency_b) {
            let t = t0 + path_b as f64 * config.delta_tau_ps + draw_jitter(&mut rng);
            tags.push(TimeTag {
                time_ps: t.round() as i64,
                channel: Channel::bob(k),
            });
        }
    }
    let dark_mean = config.dark_rate_per_detector * config.duration_per_step;
    for channel in Channel::ALL {
        let n = poisson_count(&mut rng, dark_mean);
        for _ in 0..n {
            let t = t_start as f64 + rng.random_range(0.0..window_ps as f64);
            tags.push(TimeTag {
                time_ps: t.round() as i64,
                channel,
            });
        }
    }

    let truth = StepTruth {
        step_index,
        theta: step.theta,
        alice: step.alice,
        bob: step.bob,
        lambda_true: config.lambda_true,
        class_weights: joint.class_weights,
        class_outcomes: joint.class_outcomes,
    };
    (tags, truth)
}

fn assemble(per_step: Vec<(Vec<TimeTag>, StepTruth)>) -> (TimeTagStream, TruthRecord) {
    let mut records = Vec::with_capacity(per_step.iter().map(|(t, _)| t.len()).sum());
    let mut steps = Vec::with_capacity(per_step.len());
    for (tags, truth) in per_step {
        records.extend(tags);
        steps.push(truth);
    }
    records.sort_unstable();
    (TimeTagStream { records }, TruthRecord { steps })
}

/// Simulates a full run; scan steps fan out over the execution dispatcher
/// (parallel under the default feature).
pub fn simulate_run(config: &SimConfig) -> Result<(TimeTagStream, TruthRecord)> {
    config.validate()?;
    let steps: Vec<(usize, ScanStep)> = config.scan.steps()?.into_iter().enumerate().collect();
    let per_step = exec::map_collect(&steps, |(i, step)| simulate_step(config, *i, step));
    Ok(assemble(per_step))
}

/// Sequential twin of [`simulate_run`]; bit-identical output.
pub fn simulate_run_seq(config: &SimConfig) -> Result<(TimeTagStream, TruthRecord)> {
    config.validate()?;
    let steps: Vec<(usize, ScanStep)> = config.scan.steps()?.into_iter().enumerate().collect();
    let per_step = exec::map_collect_seq(&steps, |(i, step)| simulate_step(config, *i, step));
    Ok(assemble(per_step))
}
