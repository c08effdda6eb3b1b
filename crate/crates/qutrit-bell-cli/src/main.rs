//! Batch front end: `simulate` writes a time-tag stream + step manifest,
//! `analyze` turns those files into histograms, fringe data, and the Bell
//! report, and `belltable` prints the closed-form reference numbers.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use qutrit_bell::analysis::{
    build_histogram, count_coincidences, full_report, verify_satellite_rate, write_fringe_csv,
    write_histogram_csv, write_report_json, HistogramSpec,
};
use qutrit_bell::belltest::{
    critical_lambda, i3_max, propagate_lambda_error, violation_sigma, visibility_from_lambda,
};
use qutrit_bell::error::Error;
use qutrit_bell::exec;
use qutrit_bell::montecarlo::{
    read_manifest, run_manifest, simulate_run, write_manifest, SimConfig, TimeTagStream,
};

#[derive(Parser)]
#[command(name = "qutrit-bell", version, about = "Qutrit Bell-test simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scan and write tags.csv + manifest.json
    Simulate(SimulateArgs),
    /// Analyze a tag stream into report.json, fringe.csv, histogram.csv
    Analyze(AnalyzeArgs),
    /// Print the closed-form Bell-test reference table
    Belltable,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config's out_dir or ".")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of scan steps
    #[arg(long)]
    steps: Option<usize>,
    /// Override the true contrast λ
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Time-tag CSV written by `simulate`
    tags: PathBuf,
    /// Step manifest JSON written by `simulate`
    manifest: PathBuf,
    /// JSON run config (histogram windows)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: config's out_dir or ".")
    #[arg(long)]
    out: Option<PathBuf>,
}

/// One-document configuration for both commands. Missing keys take
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    sim: SimConfig,
    /// Histogram/window parameters; derived from the sim's Δτ when absent.
    histogram: Option<HistogramSpec>,
    out_dir: Option<PathBuf>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    fn histogram_spec(&self) -> HistogramSpec {
        self.histogram
            .clone()
            .unwrap_or_else(|| HistogramSpec::for_delta_tau(self.sim.delta_tau_ps))
    }
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.sim.scan.n_steps = steps;
    }
    if let Some(lambda) = args.lambda {
        config.sim.lambda_true = lambda;
    }
    config.sim.validate()?;

    let dir = out_dir(args.out, &config);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (stream, _truth) = simulate_run(&config.sim)?;
    let manifest = run_manifest(&config.sim)?;

    let tags_path = dir.join("tags.csv");
    let manifest_path = dir.join("manifest.json");
    stream.write_csv_file(&tags_path)?;
    write_manifest(&manifest_path, &manifest)?;

    println!(
        "simulated {} steps (seed {}): {} events",
        manifest.len(),
        config.sim.seed,
        stream.len()
    );
    println!("wrote {}", tags_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let config = RunConfig::load(args.config.as_deref())?;
    let spec = config.histogram_spec();
    let dir = out_dir(args.out, &config);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let stream = TimeTagStream::read_csv_file(&args.tags)?;
    let manifest = read_manifest(&args.manifest)?;

    let hist = build_histogram(&stream, &spec)?;
    let hist_path = dir.join("histogram.csv");
    write_histogram_csv(&hist_path, &hist)?;

    let data = count_coincidences(&stream, &spec, &manifest)?;
    let fringe_path = dir.join("fringe.csv");
    write_fringe_csv(&fringe_path, &data)?;

    let report = full_report(&data)?;
    let report_path = dir.join("report.json");
    write_report_json(&report_path, &report)?;

    println!(
        "raw: lambda {:.4} ± {:.4}  I3 {:.4} ± {:.4}  V3 {:.4}  violation {:.1} sigma",
        report.raw.lambda,
        report.raw.sigma_lambda,
        report.raw.i3,
        report.raw.sigma_i,
        report.raw.v3,
        report.raw.sigma_violation
    );
    println!(
        "net: lambda {:.4} ± {:.4}  I3 {:.4} ± {:.4}  V3 {:.4}  violation {:.1} sigma",
        report.net.lambda,
        report.net.sigma_lambda,
        report.net.i3,
        report.net.sigma_i,
        report.net.v3,
        report.net.sigma_violation
    );
    match verify_satellite_rate(&stream, &spec, &manifest) {
        Ok(check) => println!(
            "satellite 2:1 lock: {} (freq+ {:.4}, freq- {:.4} cycles/rad{})",
            if check.pass {
                "pass"
            } else if check.conclusive {
                "FAIL"
            } else {
                "inconclusive"
            },
            check.freq_plus,
            check.freq_minus,
            if check.conclusive { "" } else { "; no dominant fringe" },
        ),
        Err(Error::InsufficientData(msg)) => {
            println!("satellite 2:1 lock: skipped ({msg})")
        }
        Err(e) => return Err(e.into()),
    }
    for p in [&hist_path, &fringe_path, &report_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_belltable() -> Result<()> {
    let paper_row = |lambda: f64, sigma_lambda: f64| -> Result<(f64, f64, f64, f64, f64)> {
        let i3 = lambda * i3_max();
        let (sigma_i, sigma_v) = propagate_lambda_error(3, lambda, sigma_lambda)?;
        let v3 = visibility_from_lambda(3, lambda)?;
        let violation = violation_sigma(i3, sigma_i)?;
        Ok((i3, sigma_i, v3, sigma_v, violation))
    };
    println!("I3 max (quantum)          {:.5}", i3_max());
    println!("local-variable bound      2");
    println!("critical lambda (d=2)     {:.6}", critical_lambda(2)?);
    let lc3 = critical_lambda(3)?;
    println!("critical lambda (d=3)     {:.6}", lc3);
    println!(
        "critical visibility (d=3) {:.6}",
        visibility_from_lambda(3, lc3)?
    );
    for (label, lambda) in [("raw", 0.848), ("net", 0.969)] {
        let (i3, si, v3, sv, viol) = paper_row(lambda, 0.008)?;
        println!(
            "{label}: lambda {lambda:.3} ± 0.008  I3 {i3:.3} ± {si:.3}  V3 {v3:.3} ± {sv:.3}  violation {viol:.1} sigma"
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    exec::configure_threads_from_env();
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Belltable => cmd_belltable(),
    }
}
