//! Simulation and analysis of a two-photon qutrit Bell test.
//!
//! Photon pairs traverse three-path interferometers (short/medium/long) on
//! each side; coincidences sorted by arrival-time difference realize the
//! three-outcome measurements of the I₃ Bell inequality, with the phase scan
//! locked so the long path advances at twice the medium rate.
//!
//! The crate splits into:
//! - [`quantum`]: qutrit pair states, Werner noise, and the Born-rule
//!   oracle used to cross-check every closed form.
//! - [`optics`]: interferometer model — tritter phases, the five-peak
//!   arrival-time structure, central/satellite coincidence laws, and the
//!   full joint (path × outcome) distribution the simulator samples.
//! - [`belltest`]: the I₃ combination, optimal settings, noise thresholds,
//!   visibility mapping, and error propagation.
//! - [`montecarlo`]: time-tag stream simulation (Poisson emission, detector
//!   efficiency, jitter, dark counts) with deterministic per-step RNG
//!   substreams; parallel over scan steps under the `parallel` feature.
//! - [`analysis`]: histogramming, coincidence windowing, background
//!   estimation, fringe fits, the Bell report, and the satellite-peak
//!   certification of the 2:1 phase lock.

pub mod analysis;
pub mod belltest;
pub mod error;
pub mod exec;
mod fit;
pub mod montecarlo;
pub mod optics;
pub mod quantum;

pub use analysis::{
    build_histogram, compute_report, count_coincidences, fit_fringe, fit_fringe_net,
    full_report, verify_satellite_rate, BellReport, FitResult, FringeData, HistogramSpec,
};
pub use belltest::{
    critical_lambda, evaluate_i3, i3_max, lambda_scaling, optimal_settings,
    propagate_lambda_error, violation_sigma, visibility_from_lambda, BellSettings, BellValue,
};
pub use error::{Error, Result};
pub use montecarlo::{
    run_manifest, scan_schedule, simulate_run, simulate_run_seq, SimConfig, TimeTagStream,
    TruthRecord,
};
pub use optics::{
    central_coincidence_prob, fringe_prob, path_amplitudes, peak_structure,
    satellite_fringe_prob, CouplerRatios, PeakStructure, PhaseVector,
};
pub use quantum::{
    born_rule_oracle, make_max_entangled, werner_probability, JointOutcomeTable,
    QutritPairState, WernerState,
};
