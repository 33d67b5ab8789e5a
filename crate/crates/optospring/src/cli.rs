//! Scenario runner: config ingestion, the figure-reproduction presets,
//! result persistence and plot-data emission behind the `optospring`
//! binary.
//!
//! Outputs are plot-ready CSV/JSON. Every `run` writes a manifest with the
//! config hash, seed, crate version and wall time; the data files
//! themselves are byte-reproducible for a fixed seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ampmodel::{self, SidebandPair};
use crate::dynamics;
use crate::filter::{self, QuadratureRecord, TemplateBank};
use crate::model::{self, PulseSchedule, Ramp, Segment, SystemConfig};
use crate::moments::{self, MomentState};
use crate::spring;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// Stable exit-code contract: 1 validation, 2 instability, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Instability(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "optospring",
    about = "Two mechanical oscillators coupled by cavity light: spring sweeps, sideband spectra, pulse protocols, backaction and matched-filter analysis",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the optical spring and normal modes over detuning, emit CSV.
    Spring {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Mean photon number of the sweep.
        #[arg(long, default_value_t = 5.0)]
        nbar: f64,
        /// Number of detuning points per side of zero.
        #[arg(long, default_value_t = 28)]
        steps: usize,
        /// Detuning reach in MHz.
        #[arg(long, default_value_t = 1.75)]
        span_mhz: f64,
    },
    /// Steady-state heterodyne spectrum, optionally the detuning series.
    Spectrum {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Emit the detuning ladder with 3-unit offsets for plotting.
        #[arg(long)]
        series: bool,
    },
    /// Simulate the pulsed protocol, emit traces and endpoints.
    Pulse {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma list of coupling hold times in microseconds.
        #[arg(long, value_delimiter = ',', default_value = "53")]
        tau_c: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Integrate the moment equations over the pulse, emit per-tau_c JSON.
    Backaction {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tau_c: Vec<f64>,
        /// Use the built-in backaction ladder.
        #[arg(long)]
        fig4: bool,
    },
    /// Reduce a records file into ensemble statistics and a scatter CSV.
    Analyze {
        /// Read-out records JSON (see README for the schema).
        #[arg(long)]
        records: PathBuf,
        /// Reference (uncoupled) records JSON.
        #[arg(long)]
        reference: PathBuf,
        /// Blue and red sideband powers, comma separated (P_PLUS,P_MINUS).
        #[arg(long, value_delimiter = ',')]
        sidebands: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a named scenario end to end.
    Run {
        /// fig2 | fig3 | fig4 | custom
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        tau_c: Option<Vec<f64>>,
        /// Shots per hold time for the synthetic-measurement path.
        #[arg(long, default_value_t = 2000)]
        shots: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Check a config file and dry-run the schedule stability.
    Validate {
        config: PathBuf,
    },
}

/// Parse arguments and dispatch; returns the process exit code
/// (0 success, 1 validation, 2 instability, 3 I/O).
pub fn main_entry() -> i32 {
    if let Ok(threads) = std::env::var("OPTOSPRING_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors; anything else is a usage
            // problem and belongs to the validation exit code
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Spring {
            config,
            out,
            nbar,
            steps,
            span_mhz,
        } => cmd_spring(&load_config(config.as_deref())?, &out, nbar, steps, span_mhz),
        Command::Spectrum { config, out, series } => {
            cmd_spectrum(&load_config(config.as_deref())?, &out, series)
        }
        Command::Pulse {
            config,
            out,
            tau_c,
            seed,
            format,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let taus: Vec<f64> = tau_c.iter().map(|t| t * 1e-6).collect();
            cmd_pulse_fmt(&cfg, &out, &taus, format)
        }
        Command::Backaction {
            config,
            out,
            tau_c,
            fig4,
        } => {
            let cfg = load_config(config.as_deref())?;
            let taus: Vec<f64> = if fig4 || tau_c.is_empty() {
                fig4_ladder()
            } else {
                tau_c.iter().map(|t| t * 1e-6).collect()
            };
            cmd_backaction(&cfg, &out, &taus)
        }
        Command::Analyze {
            records,
            reference,
            sidebands,
            out,
        } => cmd_analyze(&records, &reference, &sidebands, &out),
        Command::Run {
            scenario,
            config,
            out,
            seed,
            tau_c,
            shots,
            format,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let taus = tau_c.map(|ts| ts.iter().map(|t| t * 1e-6).collect::<Vec<_>>());
            let scenario = Scenario {
                name: scenario,
                config: cfg,
                out_dir: out,
                format,
                tau_c: taus,
                shots,
            };
            run(&scenario)
        }
        Command::Validate { config } => cmd_validate(&config),
    }
}

/// A named end-to-end run.
pub struct Scenario {
    pub name: String,
    pub config: SystemConfig,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub tau_c: Option<Vec<f64>>,
    pub shots: usize,
}

/// Execute a scenario: fig2, fig3, fig4 or custom (config-driven pulse).
pub fn run(scenario: &Scenario) -> Result<(), CliError> {
    let t0 = std::time::Instant::now();
    ensure_dir(&scenario.out_dir)?;
    match scenario.name.as_str() {
        "fig2" => run_fig2(&scenario.config, &scenario.out_dir)?,
        "fig3" => run_fig3(
            &scenario.config,
            &scenario.out_dir,
            scenario.tau_c.as_deref(),
            scenario.format,
        )?,
        "fig4" => run_fig4(
            &scenario.config,
            &scenario.out_dir,
            scenario.tau_c.as_deref(),
            scenario.shots,
        )?,
        "custom" => run_custom(&scenario.config, &scenario.out_dir)?,
        other => {
            return Err(CliError::Validation(format!(
                "unknown scenario `{other}` (expected fig2|fig3|fig4|custom)"
            )))
        }
    }
    write_manifest(scenario, t0.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// moment-equation and synthetic-measurement pipelines
// ---------------------------------------------------------------------------

/// Hold times of the backaction preset (s).
pub fn fig4_ladder() -> Vec<f64> {
    (1..=24).map(|i| i as f64 * 5e-6).collect()
}

/// Hold times of the energy-exchange preset (s).
pub fn fig3_ladder() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 10e-6).collect()
}

/// Moment-equation evolution through the coupling pulse: returns the state
/// before (probe steady state with the coherent excitation imprinted) and
/// after the pulse. A zero hold time skips the pulse entirely.
pub fn protocol_moments(
    config: &SystemConfig,
    tau_c: f64,
    dt: f64,
) -> (MomentState, MomentState) {
    let probe = config.drive.at(model::PROBE_NBAR, 0.0);
    let mut before = moments::steady_state(&config.osc, &probe, dt);
    before.t = 0.0;
    // coherent excitation: resonant amplitude on the low-frequency
    // oscillator, percent-level spectral leakage on the other
    if let Some(exc) = &config.schedule.excitation {
        let amp = exc.amplitude / (2.0 * config.osc[0].zero_point_length());
        before.mean = [C64::new(amp, 0.0), C64::new(0.015 * amp, 0.0)];
        for j in 0..2 {
            before.occ[j] += before.mean[j].norm_sqr();
        }
        before.cross += before.mean[0].conj() * before.mean[1];
        before.anomalous = [
            before.anomalous[0] + before.mean[0] * before.mean[0],
            before.anomalous[1] + before.mean[1] * before.mean[1],
            before.anomalous[2] + before.mean[0] * before.mean[1],
        ];
    }
    if tau_c <= 0.0 {
        return (before, before);
    }
    let ramp = model::DEFAULT_RAMP_S;
    let schedule = PulseSchedule {
        segments: vec![
            Segment {
                duration: ramp + tau_c,
                nbar: model::COUPLE_NBAR,
                delta_pc: model::couple_delta_pc(),
                ramp: Ramp::Linear { duration: ramp },
            },
            Segment {
                duration: ramp,
                nbar: model::PROBE_NBAR,
                delta_pc: 0.0,
                ramp: Ramp::Linear { duration: ramp },
            },
        ],
        excitation: None,
    };
    // the waveform starts at the first segment's targets; prepend the probe
    // state by ramping from it explicitly
    let waveform = {
        let mut with_probe = schedule.clone();
        with_probe.segments.insert(
            0,
            Segment {
                duration: dt.max(1e-9),
                nbar: model::PROBE_NBAR,
                delta_pc: 0.0,
                ramp: Ramp::Step,
            },
        );
        model::DriveWaveform::resolve(&with_probe)
    };
    let duration = ramp + tau_c + ramp + dt.max(1e-9);
    let cavity = config.drive;
    let after = moments::evolve(
        &before,
        &config.osc,
        |t| {
            let (nbar, delta) = waveform.eval(t);
            cavity.at(nbar, delta)
        },
        duration,
        dt,
    )
    .expect("moment step within guard");
    (before, after)
}

/// One point of the backaction theory curve.
#[derive(Debug, Clone, Serialize)]
pub struct BackactionPoint {
    pub tau_c_s: f64,
    pub dnu1: f64,
    pub dnu2: f64,
    /// Buildup of the cross-oscillator noise correlation over the pulse.
    pub r: f64,
    pub occ1: f64,
    pub occ2: f64,
    pub mean1: [f64; 2],
    pub mean2: [f64; 2],
}

/// Backaction theory ladder: added phonons and correlations per hold time.
pub fn backaction_theory(config: &SystemConfig, tau_cs: &[f64], dt: f64) -> Vec<BackactionPoint> {
    tau_cs
        .par_iter()
        .map(|&tau| {
            let (before, after) = protocol_moments(config, tau, dt);
            let dnu = moments::added_phonons(&before, &after);
            BackactionPoint {
                tau_c_s: tau,
                dnu1: dnu[0],
                dnu2: dnu[1],
                r: moments::correlation(&after).unwrap_or(0.0)
                    - moments::correlation(&before).unwrap_or(0.0),
                occ1: after.incoherent_occ(0),
                occ2: after.incoherent_occ(1),
                mean1: [after.mean[0].re, after.mean[0].im],
                mean2: [after.mean[1].re, after.mean[1].im],
            }
        })
        .collect()
}

/// Synthetic-measurement result for one hold time.
pub struct MeasuredPoint {
    pub tau_c_s: f64,
    pub stats: filter::EnsembleStats,
    pub records: Vec<QuadratureRecord>,
    pub reference_records: Vec<QuadratureRecord>,
    /// Batch scatter of (Δν₁, Δν₂, r) over 10 sub-ensembles, for empirical
    /// error bars.
    pub batch_sigma: (f64, f64, f64),
    /// Moment-equation prediction of the added phonons.
    pub theory_dnu: [f64; 2],
    /// Moment-equation expectation of the measured correlation statistic
    /// (reference-subtracted numerator over the read-out variances).
    pub theory_r: f64,
}

/// Full synthetic-measurement path at one hold time: sample shots from the
/// moment-equation state, ring them down through the classical simulator
/// with shot noise, run the matched filter and reduce the ensembles.
pub fn measure_fig4_point(
    config: &SystemConfig,
    tau_c: f64,
    n_shots: usize,
    dt_sim: f64,
) -> Result<MeasuredPoint, CliError> {
    let (before, after) = protocol_moments(config, tau_c, moments::DEFAULT_DT);
    let bank = TemplateBank::for_readout(config, dt_sim)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let n_window = bank.n_samples();
    let ring_schedule = PulseSchedule {
        segments: vec![Segment {
            duration: (n_window + 2) as f64 * dt_sim,
            nbar: model::PROBE_NBAR,
            delta_pc: 0.0,
            ramp: Ramp::Step,
        }],
        excitation: None,
    };
    let streams = config.rng();
    let shoot = |state: &MomentState, base: u64| -> Result<Vec<QuadratureRecord>, CliError> {
        (0..n_shots)
            .into_par_iter()
            .map(|shot| {
                let mut rng = streams.stream(model::stream::WIGNER, base + shot as u64);
                let eta = moments::sample_envelope(state, &config.osc, &mut rng);
                let mut initial = [0.0f64; 4];
                for j in 0..2 {
                    let z_ho = config.osc[j].zero_point_length();
                    let w_eff = config.osc[j].effective_omega(model::PROBE_NBAR);
                    let gamma_half = config.osc[j].gamma / 2.0;
                    initial[2 * j] = 2.0 * z_ho * eta[j].re;
                    initial[2 * j + 1] = 2.0 * z_ho * (w_eff * eta[j].im - gamma_half * eta[j].re);
                }
                let trace = dynamics::simulate_schedule(
                    config,
                    &ring_schedule,
                    initial,
                    Some(base + shot as u64),
                    dt_sim,
                )
                .map_err(|e| CliError::Instability(e.to_string()))?;
                bank.process_trace(config, &trace, shot as u64)
                    .map_err(|e| CliError::Validation(e.to_string()))
            })
            .collect()
    };
    let readout = shoot(&after, 1 << 32)?;
    let reference = shoot(&before, 2 << 32)?;
    let nu_ref = 0.5 * (before.incoherent_occ(0) + before.incoherent_occ(1));
    let sidebands = ampmodel::sideband_pair_from_occupation(nu_ref, 1.0);
    let stats = filter::ensemble_stats(&readout, &reference, &sidebands)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    // empirical spread over 10 batches
    let n_batches = 10.min(n_shots / 10).max(2);
    let per = n_shots / n_batches;
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let mut rs = Vec::new();
    for b in 0..n_batches {
        let lo = b * per;
        let hi = lo + per;
        if let Ok(s) = filter::ensemble_stats(&readout[lo..hi], &reference[lo..hi], &sidebands) {
            d1.push(s.delta_nu[0]);
            d2.push(s.delta_nu[1]);
            rs.push(s.r);
        }
    }
    let sem = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return f64::INFINITY;
        }
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
    };
    // expectation of the measured statistics under the moment model
    let theory_dnu = moments::added_phonons(&before, &after);
    let den: f64 = [0, 1]
        .map(|j| after.incoherent_occ(j) + 0.5)
        .iter()
        .product::<f64>()
        .sqrt();
    let theory_r =
        (after.incoherent_cross().re - before.incoherent_cross().re) / den;
    Ok(MeasuredPoint {
        tau_c_s: tau_c,
        stats,
        records: readout,
        reference_records: reference,
        batch_sigma: (sem(&d1), sem(&d2), sem(&rs)),
        theory_dnu,
        theory_r,
    })
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_spring(
    config: &SystemConfig,
    out: &Path,
    nbar: f64,
    steps: usize,
    span_mhz: f64,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let mut csv = String::from(
        "delta_pc_hz,nbar,k11,k12,k22,omega_plus_hz,omega_minus_hz,w_plus_1,w_plus_2,w_minus_1,w_minus_2\n",
    );
    let n = steps as i64;
    for i in -n..=n {
        let delta = model::hz(span_mhz * 1e6 * i as f64 / n as f64);
        let drive = config.drive.at(nbar, delta);
        let s = spring::spring_constants(&config.osc, &drive);
        match spring::normal_modes(&config.osc, &drive) {
            Ok(nm) => {
                csv.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    model::to_hz(delta),
                    nbar,
                    s.k[0][0],
                    s.k[0][1],
                    s.k[1][1],
                    model::to_hz(nm.omega_plus),
                    model::to_hz(nm.omega_minus),
                    nm.weights[0][0],
                    nm.weights[0][1],
                    nm.weights[1][0],
                    nm.weights[1][1],
                ));
            }
            Err(e) => return Err(CliError::Instability(e.to_string())),
        }
    }
    write_string(&out.join("spring_sweep.csv"), &csv)
}

/// Detuning ladder of the steady-spectrum series (rad/s).
pub fn fig2_detunings() -> Vec<f64> {
    [0.0, 0.25e6, 0.5e6, 0.75e6, 1.0e6, 1.25e6]
        .iter()
        .map(|d| model::hz(*d))
        .collect()
}

fn cmd_spectrum(config: &SystemConfig, out: &Path, series: bool) -> Result<(), CliError> {
    ensure_dir(out)?;
    let grid = ampmodel::default_grid(&config.osc);
    let rbw = ampmodel::default_resolution_bw();
    let one = ampmodel::steady_spectrum(&config.osc, &config.drive, &grid, rbw)
        .map_err(|e| CliError::Instability(e.to_string()))?;
    let mut csv = String::from("freq_hz,psd_sn_units\n");
    for (w, p) in one.freqs.iter().zip(one.psd.iter()) {
        csv.push_str(&format!("{:.12e},{:.12e}\n", model::to_hz(*w), p));
    }
    write_string(&out.join("spectrum.csv"), &csv)?;
    if series {
        run_fig2(config, out)?;
    }
    Ok(())
}

fn run_fig2(config: &SystemConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let grid = ampmodel::default_grid(&config.osc);
    let rbw = ampmodel::default_resolution_bw();
    let detunings = fig2_detunings();
    let nbar = 5.0;
    let mut spectra = Vec::new();
    for &delta in &detunings {
        let drive = config.drive.at(nbar, delta);
        let s = ampmodel::steady_spectrum(&config.osc, &drive, &grid, rbw)
            .map_err(|e| CliError::Instability(e.to_string()))?;
        spectra.push(s);
    }
    // raw series
    let mut csv = String::from("freq_hz");
    for &d in &detunings {
        csv.push_str(&format!(",psd_delta_{:.0}khz", model::to_hz(d) / 1e3));
    }
    csv.push('\n');
    for (i, w) in grid.iter().enumerate() {
        csv.push_str(&format!("{:.12e}", model::to_hz(*w)));
        for s in &spectra {
            csv.push_str(&format!(",{:.12e}", s.psd[i]));
        }
        csv.push('\n');
    }
    write_string(&out.join("fig2_spectra.csv"), &csv)?;
    // offset companion file for plotting, 3 shot-noise units apart
    let mut csv_off = csv.clone();
    csv_off.clear();
    csv_off.push_str("freq_hz");
    for &d in &detunings {
        csv_off.push_str(&format!(",psd_offset_delta_{:.0}khz", model::to_hz(d) / 1e3));
    }
    csv_off.push('\n');
    for (i, w) in grid.iter().enumerate() {
        csv_off.push_str(&format!("{:.12e}", model::to_hz(*w)));
        for (k, s) in spectra.iter().enumerate() {
            csv_off.push_str(&format!(",{:.12e}", s.psd[i] + 3.0 * k as f64));
        }
        csv_off.push('\n');
    }
    write_string(&out.join("fig2_spectra_offset.csv"), &csv_off)?;
    // fitted peak table with the normal-mode model alongside
    let mut table = String::from(
        "delta_pc_hz,f_lo_hz,f_hi_hz,height_lo,height_hi,fwhm_lo_hz,fwhm_hi_hz,sep_hz,model_minus_hz,model_plus_hz\n",
    );
    for (s, &delta) in spectra.iter().zip(detunings.iter()) {
        let peaks = ampmodel::fit_spectrum_peaks(s)
            .ok_or_else(|| CliError::Validation("peak fit failed".into()))?;
        let drive = config.drive.at(nbar, delta);
        let nm = spring::normal_modes(&config.osc, &drive)
            .map_err(|e| CliError::Instability(e.to_string()))?;
        table.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            model::to_hz(delta),
            model::to_hz(peaks[0].center),
            model::to_hz(peaks[1].center),
            peaks[0].height,
            peaks[1].height,
            model::to_hz(peaks[0].fwhm),
            model::to_hz(peaks[1].fwhm),
            model::to_hz(peaks[1].center - peaks[0].center),
            model::to_hz(nm.omega_minus),
            model::to_hz(nm.omega_plus),
        ));
    }
    write_string(&out.join("fig2_peaks.csv"), &table)
}

/// Run the configured schedule exactly as written, emitting the trace and
/// the read-out endpoint.
fn run_custom(config: &SystemConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let trace = dynamics::simulate(config).map_err(|e| match e {
        dynamics::DynamicsError::Unstable { .. } => CliError::Instability(e.to_string()),
        other => CliError::Validation(other.to_string()),
    })?;
    let z = dynamics::readout_phasors(&trace, &config.osc);
    let display = trace.display_trace(&config.osc);
    let mut csv = String::from("t_s,z1_m,z2_m,het_sn,het_display\n");
    let every = (trace.len() / 4000).max(1);
    for i in (0..trace.len()).step_by(every) {
        csv.push_str(&format!(
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            trace.time(i),
            trace.z[0][i],
            trace.z[1][i],
            trace.het[i],
            display[i]
        ));
    }
    write_string(&out.join("custom_trace.csv"), &csv)?;
    let endpoint = serde_json::json!({
        "readout_start_s": trace.readout_start,
        "z1": {"re": z[0].re, "im": z[0].im},
        "z2": {"re": z[1].re, "im": z[1].im},
        "transfer_fraction": dynamics::transfer_fraction(&trace, &config.osc),
    });
    write_string(
        &out.join("custom_endpoint.json"),
        &serde_json::to_string_pretty(&endpoint).map_err(|e| CliError::Io(e.to_string()))?,
    )
}

fn cmd_pulse_fmt(
    config: &SystemConfig,
    out: &Path,
    tau_cs: &[f64],
    format: OutputFormat,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    #[derive(Serialize)]
    struct Endpoint {
        tau_c_s: f64,
        z1: [f64; 2],
        z2: [f64; 2],
        transfer_fraction: f64,
    }
    let mut endpoint_rows: Vec<Endpoint> = Vec::new();
    let mut endpoints = String::from("tau_c_us,re_z1,im_z1,re_z2,im_z2,transfer_fraction\n");
    for &tau in tau_cs {
        let schedule = model::pulse_protocol(&config.osc, tau);
        let trace = dynamics::simulate_schedule(
            config,
            &schedule,
            [0.0; 4],
            Some((tau * 1e9) as u64),
            dynamics::default_dt(&config.osc),
        )
        .map_err(|e| match e {
            dynamics::DynamicsError::Unstable { .. } => CliError::Instability(e.to_string()),
            other => CliError::Validation(other.to_string()),
        })?;
        let z = dynamics::readout_phasors(&trace, &config.osc);
        let frac = dynamics::transfer_fraction(&trace, &config.osc);
        endpoints.push_str(&format!(
            "{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            tau * 1e6,
            z[0].re,
            z[0].im,
            z[1].re,
            z[1].im,
            frac
        ));
        endpoint_rows.push(Endpoint {
            tau_c_s: tau,
            z1: [z[0].re, z[0].im],
            z2: [z[1].re, z[1].im],
            transfer_fraction: frac,
        });
        // decimated raw and display traces for this hold time
        let name = format!("pulse_trace_{:.0}us.csv", tau * 1e6);
        let display = trace.display_trace(&config.osc);
        let mut csv = String::from("t_s,z1_m,z2_m,het_sn,het_display,nbar,delta_pc_hz\n");
        let every = (trace.len() / 4000).max(1);
        for i in (0..trace.len()).step_by(every) {
            let t = trace.time(i);
            let (nbar, delta) = trace.schedule_applied.eval(t);
            csv.push_str(&format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{:.6e}\n",
                t,
                trace.z[0][i],
                trace.z[1][i],
                trace.het[i],
                display[i],
                nbar,
                model::to_hz(delta)
            ));
        }
        write_string(&out.join(name), &csv)?;
    }
    match format {
        OutputFormat::Csv => write_string(&out.join("pulse_endpoints.csv"), &endpoints),
        OutputFormat::Json => write_string(
            &out.join("pulse_endpoints.json"),
            &serde_json::to_string_pretty(&endpoint_rows)
                .map_err(|e| CliError::Io(e.to_string()))?,
        ),
    }
}

fn cmd_backaction(config: &SystemConfig, out: &Path, tau_cs: &[f64]) -> Result<(), CliError> {
    ensure_dir(out)?;
    let points = backaction_theory(config, tau_cs, moments::DEFAULT_DT);
    let json = serde_json::to_string_pretty(&points)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_string(&out.join("backaction.json"), &json)
}

fn run_fig3(
    config: &SystemConfig,
    out: &Path,
    tau_c: Option<&[f64]>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let taus: Vec<f64> = tau_c.map(|t| t.to_vec()).unwrap_or_else(fig3_ladder);
    cmd_pulse_fmt(config, out, &taus, format)?;
    // Monte-Carlo uncertainty bands on a thinned ladder
    let thin: Vec<f64> = taus.iter().copied().step_by(2).collect();
    let mc = dynamics::monte_carlo(config, &thin);
    #[derive(Serialize)]
    struct McPoint {
        tau_c_s: f64,
        mean_z1: [f64; 2],
        mean_z2: [f64; 2],
        cov_z1: [f64; 3],
        cov_z2: [f64; 3],
        area_z1: f64,
        area_z2: f64,
    }
    #[derive(Serialize)]
    struct McOut {
        n_samples: usize,
        discard_fraction: f64,
        points: Vec<McPoint>,
    }
    let out_json = McOut {
        n_samples: mc.n_samples,
        discard_fraction: mc.discard_fraction,
        points: (0..mc.tau_c.len())
            .map(|i| McPoint {
                tau_c_s: mc.tau_c[i],
                mean_z1: [mc.mean[i][0].re, mc.mean[i][0].im],
                mean_z2: [mc.mean[i][1].re, mc.mean[i][1].im],
                cov_z1: mc.cov[i][0],
                cov_z2: mc.cov[i][1],
                area_z1: mc.area[i][0],
                area_z2: mc.area[i][1],
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&out_json).map_err(|e| CliError::Io(e.to_string()))?;
    write_string(&out.join("fig3_monte_carlo.json"), &json)
}

fn run_fig4(
    config: &SystemConfig,
    out: &Path,
    tau_c: Option<&[f64]>,
    shots: usize,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let taus: Vec<f64> = tau_c.map(|t| t.to_vec()).unwrap_or_else(fig4_ladder);
    let theory = backaction_theory(config, &taus, moments::DEFAULT_DT);
    // synthetic-measurement path at three hold times
    let picks: Vec<f64> = if taus.len() >= 3 {
        vec![taus[taus.len() / 4], taus[taus.len() / 2], taus[taus.len() - 1]]
    } else {
        taus.clone()
    };
    let dt_sim = 8.0 * dynamics::default_dt(&config.osc);
    #[derive(Serialize)]
    struct MeasuredJson {
        tau_c_s: f64,
        dnu1: f64,
        dnu2: f64,
        r: f64,
        r_interval: (f64, f64),
        sigma_dnu1: f64,
        sigma_dnu2: f64,
        sigma_r: f64,
        theory_dnu1: f64,
        theory_dnu2: f64,
        theory_r: f64,
        n_shots: usize,
    }
    let mut measured = Vec::new();
    for &tau in &picks {
        let point = measure_fig4_point(config, tau, shots, dt_sim)?;
        // phase-space scatter and raw records for `analyze`
        let mut scatter = String::from("shot_id,re_z1,im_z1,re_z2,im_z2\n");
        for rec in &point.records {
            scatter.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                rec.shot_id, rec.z[0].re, rec.z[0].im, rec.z[1].re, rec.z[1].im
            ));
        }
        write_string(
            &out.join(format!("fig4_scatter_{:.0}us.csv", tau * 1e6)),
            &scatter,
        )?;
        write_string(
            &out.join(format!("fig4_records_{:.0}us.json", tau * 1e6)),
            &records_to_json(&point.records),
        )?;
        write_string(
            &out.join(format!("fig4_reference_{:.0}us.json", tau * 1e6)),
            &records_to_json(&point.reference_records),
        )?;
        measured.push(MeasuredJson {
            tau_c_s: tau,
            dnu1: point.stats.delta_nu[0],
            dnu2: point.stats.delta_nu[1],
            r: point.stats.r,
            r_interval: point.stats.r_interval,
            sigma_dnu1: point.batch_sigma.0,
            sigma_dnu2: point.batch_sigma.1,
            sigma_r: point.batch_sigma.2,
            theory_dnu1: point.theory_dnu[0],
            theory_dnu2: point.theory_dnu[1],
            theory_r: point.theory_r,
            n_shots: shots,
        });
    }
    #[derive(Serialize)]
    struct Fig4Out {
        theory: Vec<BackactionPoint>,
        measured: Vec<MeasuredJson>,
    }
    let json = serde_json::to_string_pretty(&Fig4Out { theory, measured })
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_string(&out.join("fig4.json"), &json)
}

// ---------------------------------------------------------------------------
// analyze: records files in, ensemble stats out
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RawRecord {
    shot_id: u64,
    re_z1: f64,
    im_z1: f64,
    re_z2: f64,
    im_z2: f64,
    re_ref1: f64,
    im_ref1: f64,
    re_ref2: f64,
    im_ref2: f64,
}

fn read_records(path: &Path) -> Result<Vec<QuadratureRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path:?}: {e}")))?;
    let raw: Vec<RawRecord> =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{path:?}: {e}")))?;
    Ok(raw
        .into_iter()
        .map(|r| QuadratureRecord {
            z: [C64::new(r.re_z1, r.im_z1), C64::new(r.re_z2, r.im_z2)],
            shot_ref: [C64::new(r.re_ref1, r.im_ref1), C64::new(r.re_ref2, r.im_ref2)],
            shot_id: r.shot_id,
        })
        .collect())
}

/// Serialize records to the `analyze` JSON schema.
pub fn records_to_json(records: &[QuadratureRecord]) -> String {
    let raw: Vec<RawRecord> = records
        .iter()
        .map(|r| RawRecord {
            shot_id: r.shot_id,
            re_z1: r.z[0].re,
            im_z1: r.z[0].im,
            re_z2: r.z[1].re,
            im_z2: r.z[1].im,
            re_ref1: r.shot_ref[0].re,
            im_ref1: r.shot_ref[0].im,
            re_ref2: r.shot_ref[1].re,
            im_ref2: r.shot_ref[1].im,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("record serialization")
}

fn cmd_analyze(
    records_path: &Path,
    reference_path: &Path,
    sidebands: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let readout = read_records(records_path)?;
    let reference = read_records(reference_path)?;
    if sidebands.len() != 2 {
        return Err(CliError::Validation(
            "expected --sidebands P_PLUS,P_MINUS".into(),
        ));
    }
    let sb = SidebandPair {
        p_plus: sidebands[0],
        p_minus: sidebands[1],
    };
    let stats = filter::ensemble_stats(&readout, &reference, &sb)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let json = serde_json::to_string_pretty(&stats).map_err(|e| CliError::Io(e.to_string()))?;
    write_string(&out.join("ensemble_stats.json"), &json)?;
    let mut scatter = String::from("shot_id,re_z1,im_z1,re_z2,im_z2\n");
    for rec in &readout {
        scatter.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            rec.shot_id, rec.z[0].re, rec.z[0].im, rec.z[1].re, rec.z[1].im
        ));
    }
    write_string(&out.join("scatter.csv"), &scatter)
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path:?}: {e}")))?;
    #[derive(Serialize)]
    struct Report {
        valid: bool,
        issues: Vec<model::FieldIssue>,
        warnings: Vec<String>,
    }
    match SystemConfig::from_json_str(&text) {
        Err(model::ConfigError::Parse(e)) => {
            let report = Report {
                valid: false,
                issues: vec![model::FieldIssue {
                    field: "<file>".into(),
                    message: e.to_string(),
                }],
                warnings: vec![],
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Err(CliError::Validation("config did not parse".into()))
        }
        Err(model::ConfigError::Invalid(issues)) => {
            let report = Report {
                valid: false,
                issues,
                warnings: vec![],
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Err(CliError::Validation("config failed validation".into()))
        }
        Ok(cfg) => {
            // dry-run stability of every schedule plateau
            let mut warnings = Vec::new();
            for (i, seg) in cfg.schedule.segments.iter().enumerate() {
                let drive = cfg.drive.at(seg.nbar, seg.delta_pc);
                if moments::drift_max_real(&cfg.osc, &drive) >= 0.0
                    || spring::normal_modes(&cfg.osc, &drive).is_err()
                {
                    warnings.push(format!(
                        "schedule.segments[{i}] exceeds the stability boundary (nbar = {}, delta_pc = {:.3} MHz)",
                        seg.nbar,
                        model::to_hz(seg.delta_pc) / 1e6
                    ));
                }
            }
            let report = Report {
                valid: true,
                issues: vec![],
                warnings,
            };
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// files, manifests, hashing
// ---------------------------------------------------------------------------

fn load_config(path: Option<&Path>) -> Result<SystemConfig, CliError> {
    match path {
        None => Ok(model::paper_defaults()),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Io(format!("{p:?}: {e}")))?;
            SystemConfig::from_json_str(&text).map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{dir:?}: {e}")))
}

fn write_string(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{path:?}: {e}")))
}

/// FNV-1a hash of the canonical config serialization.
pub fn config_hash(config: &SystemConfig) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in config.to_json_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn write_manifest(scenario: &Scenario, wall_time_s: f64) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Manifest {
        scenario: String,
        command: Vec<String>,
        config_hash: String,
        seed: u64,
        version: String,
        wall_time_s: f64,
    }
    let manifest = Manifest {
        scenario: scenario.name.clone(),
        command: std::env::args().collect(),
        config_hash: config_hash(&scenario.config),
        seed: scenario.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write_string(&scenario.out_dir.join("manifest.json"), &json)
}
