//! Time-domain classical simulation of the three-step pulse protocol:
//! coherent excitation, optical coupling for a hold time τ_c, and free
//! ring-down read-out, with synthetic shot-noise-limited heterodyne traces
//! and Monte-Carlo parameter-uncertainty ensembles.
//!
//! The coherent motion follows the classical equations
//!
//! ```text
//! M_i z̈_i = −M_i ω_i,eff(t)² z_i − M_i Γ_i ż_i − Σ_j k_ij(t) z_j + F_i(t)
//! ```
//!
//! with ω_i,eff including the quadratic trap shift ω_q,i n̄(t) and the
//! spring constants evaluated on the scheduled n̄(t), Δ_pc(t). The
//! deterministic dynamics carries no stochastic backaction (that lives in
//! the moment integrator); shot noise is added to the detected trace only.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    stream, CavityDrive, DriveWaveform, Envelope, Excitation, OscillatorParams, PulseSchedule,
    Ramp, SystemConfig, HBAR,
};
use crate::moments;
use crate::spring;

/// Default integration step: 512 samples per cycle of the fast oscillator.
/// Fine enough that halving it moves protocol endpoints by well under 1e-6
/// relative.
pub fn default_dt(osc: &[OscillatorParams; 2]) -> f64 {
    1.0 / (512.0 * crate::model::to_hz(osc[1].omega))
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("schedule segment {segment} is dynamically unstable")]
    Unstable { segment: usize },
    #[error("schedule gap: {0}")]
    ScheduleGap(String),
}

/// Simulated run: time grid, oscillator displacements, detected heterodyne
/// trace and the drive waveform that was actually applied.
#[derive(Debug, Clone)]
pub struct TraceSet {
    /// Uniform sample step (s); divides every schedule segment.
    pub dt: f64,
    /// Oscillator displacements (m).
    pub z: [Vec<f64>; 2],
    /// Detected heterodyne phase-quadrature trace in shot-noise units
    /// (white shot floor of unit two-sided PSD unless synthesized
    /// noiseless).
    pub het: Vec<f64>,
    /// Resolved drive waveform n̄(t), Δ_pc(t).
    pub schedule_applied: DriveWaveform,
    /// Start of the read-out plateau (s).
    pub readout_start: f64,
    /// Velocities at the read-out plateau start (m/s), for envelope
    /// extraction.
    pub readout_velocity: [f64; 2],
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.het.len()
    }

    pub fn is_empty(&self) -> bool {
        self.het.is_empty()
    }

    /// Sample time of index `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Materialized time grid.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Zero-phase band-passed copy of the heterodyne trace for display:
    /// second-order Butterworth, 40 kHz wide, centered between the
    /// mechanical resonances.
    pub fn display_trace(&self, osc: &[OscillatorParams; 2]) -> Vec<f64> {
        let fs = 1.0 / self.dt;
        let f_center = crate::model::to_hz(0.5 * (osc[0].omega + osc[1].omega));
        crate::spectral::bandpass_zero_phase(&self.het, fs, f_center, 40e3)
    }
}

/// Sampled excitation force waveform `amplitude · w(t) · cos(ω t)`,
/// truncated to `n_cycles` carrier periods. `amplitude` is in force units;
/// a zero amplitude gives the zero waveform.
pub fn excitation_pulse(
    envelope: Envelope,
    omega_excite: f64,
    n_cycles: u32,
    amplitude: f64,
    dt: f64,
) -> Vec<f64> {
    let duration = n_cycles as f64 * std::f64::consts::TAU / omega_excite;
    let n = (duration / dt).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            amplitude * envelope_value(envelope, t / duration) * (omega_excite * t).cos()
        })
        .collect()
}

fn envelope_value(envelope: Envelope, u: f64) -> f64 {
    match envelope {
        Envelope::Rect => 1.0,
        Envelope::Blackman => {
            0.42 - 0.5 * (std::f64::consts::TAU * u).cos()
                + 0.08 * (2.0 * std::f64::consts::TAU * u).cos()
        }
    }
}

/// Calibrated peak force (N) that leaves the resonantly driven oscillator
/// with the requested displacement amplitude after the pulse, accounting
/// for ring-down during the drive.
fn calibrated_force(exc: &Excitation, osc: &OscillatorParams) -> f64 {
    let duration = exc.duration();
    // response integral of the rotating-frame amplitude equation
    let n = 4000;
    let gamma_half = osc.gamma / 2.0;
    let mut integral = 0.0;
    for i in 0..=n {
        let s = duration * i as f64 / n as f64;
        let w = envelope_value(exc.envelope, s / duration);
        let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
        integral += weight * w * (-gamma_half * (duration - s)).exp();
    }
    integral *= duration / n as f64;
    if integral <= 0.0 {
        return 0.0;
    }
    exc.amplitude * 2.0 * osc.mass * exc.omega / integral
}

struct ForceWave {
    t0: f64,
    t1: f64,
    omega: f64,
    envelope: Envelope,
    f0: f64,
}

impl ForceWave {
    fn eval(&self, t: f64) -> f64 {
        if t < self.t0 || t >= self.t1 || self.f0 == 0.0 {
            return 0.0;
        }
        let tau = t - self.t0;
        let u = tau / (self.t1 - self.t0);
        self.f0 * envelope_value(self.envelope, u) * (self.omega * tau).cos()
    }
}

/// Schedule resolved onto the integration grid: segment durations snapped to
/// multiples of `dt`, the drive waveform, and the calibrated excitation.
struct ResolvedRun {
    waveform: DriveWaveform,
    force: Option<ForceWave>,
    n_steps: usize,
    readout_start: f64,
}

fn resolve(
    osc: &[OscillatorParams; 2],
    cavity: &CavityDrive,
    schedule: &PulseSchedule,
    dt: f64,
) -> Result<ResolvedRun, DynamicsError> {
    if schedule.segments.is_empty() {
        return Err(DynamicsError::ScheduleGap(
            "schedule has no segments".into(),
        ));
    }
    // snap every segment to the integration grid so dt divides it exactly
    let mut snapped = schedule.clone();
    for seg in snapped.segments.iter_mut() {
        let n = (seg.duration / dt).round().max(1.0);
        seg.duration = n * dt;
    }
    if let Some(exc) = &snapped.excitation {
        if exc.duration() > snapped.segments[0].duration {
            return Err(DynamicsError::ScheduleGap(format!(
                "excitation of {:.1} us does not fit in the first segment of {:.1} us",
                exc.duration() * 1e6,
                snapped.segments[0].duration * 1e6
            )));
        }
    }
    // segment-wise stability of the plateaus
    for (i, seg) in snapped.segments.iter().enumerate() {
        let drive = cavity.at(seg.nbar, seg.delta_pc);
        if moments::drift_max_real(osc, &drive) >= 0.0 || spring::normal_modes(osc, &drive).is_err()
        {
            return Err(DynamicsError::Unstable { segment: i });
        }
    }
    let waveform = DriveWaveform::resolve(&snapped);
    let force = snapped.excitation.as_ref().map(|exc| ForceWave {
        t0: 0.0,
        t1: exc.duration(),
        omega: exc.omega,
        envelope: exc.envelope,
        f0: calibrated_force(exc, &osc[0]),
    });
    let total = snapped.segments.iter().map(|s| s.duration).sum::<f64>();
    let last = snapped.segments.last().unwrap();
    let ramp = match last.ramp {
        Ramp::Step => 0.0,
        Ramp::Linear { duration } => duration,
    };
    Ok(ResolvedRun {
        waveform,
        force,
        n_steps: (total / dt).round() as usize,
        readout_start: total - last.duration + ramp,
    })
}

/// Integrate the full configured schedule from rest, with shot noise on the
/// detected trace (stream 0).
pub fn simulate(config: &SystemConfig) -> Result<TraceSet, DynamicsError> {
    simulate_schedule(
        config,
        &config.schedule,
        [0.0; 4],
        Some(0),
        default_dt(&config.osc),
    )
}

/// Integrate `schedule` from the phase-space point `initial`
/// (z₁, ż₁, z₂, ż₂). `shot_noise` selects the shot-noise stream, or
/// synthesizes a noiseless trace when `None`.
pub fn simulate_schedule(
    config: &SystemConfig,
    schedule: &PulseSchedule,
    initial: [f64; 4],
    shot_noise: Option<u64>,
    dt: f64,
) -> Result<TraceSet, DynamicsError> {
    let osc = &config.osc;
    let run = resolve(osc, &config.drive, schedule, dt)?;
    let n = run.n_steps;

    // spring prefactors: k_ij(t) = pre_ij · 2 n̄ Δ / (κ² + Δ²)
    let z_ho = [osc[0].zero_point_length(), osc[1].zero_point_length()];
    let mut pre = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            pre[i][j] = HBAR * osc[i].g * osc[j].g / (z_ho[i] * z_ho[j]);
        }
    }
    let kappa2 = config.drive.kappa * config.drive.kappa;
    let mass = [osc[0].mass, osc[1].mass];

    let accel = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let (nbar, delta) = run.waveform.eval(t);
        let lorentz = 2.0 * nbar * delta / (kappa2 + delta * delta);
        let f = run.force.as_ref().map_or(0.0, |fw| fw.eval(t));
        let w_eff = [osc[0].effective_omega(nbar), osc[1].effective_omega(nbar)];
        let mut out = [0.0f64; 4];
        for i in 0..2 {
            let zi = y[2 * i];
            let vi = y[2 * i + 1];
            let spring_force = (pre[i][0] * y[0] + pre[i][1] * y[2]) * lorentz;
            out[2 * i] = vi;
            out[2 * i + 1] = -w_eff[i] * w_eff[i] * zi - osc[i].gamma * vi
                - spring_force / mass[i]
                + f / mass[i];
        }
        out
    };

    let mut y = initial;
    let mut z = [Vec::with_capacity(n + 1), Vec::with_capacity(n + 1)];
    z[0].push(y[0]);
    z[1].push(y[2]);
    let readout_idx = (run.readout_start / dt).round() as usize;
    let mut readout_velocity = [y[1], y[3]];
    for step in 0..n {
        let t = step as f64 * dt;
        let k1 = accel(t, &y);
        let y2 = add_scaled(&y, &k1, dt / 2.0);
        let k2 = accel(t + dt / 2.0, &y2);
        let y3 = add_scaled(&y, &k2, dt / 2.0);
        let k3 = accel(t + dt / 2.0, &y3);
        let y4 = add_scaled(&y, &k3, dt);
        let k4 = accel(t + dt, &y4);
        for i in 0..4 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        z[0].push(y[0]);
        z[1].push(y[2]);
        if step + 1 == readout_idx {
            readout_velocity = [y[1], y[3]];
        }
    }

    // detected trace: instantaneous measurement weights plus white shot
    // noise of unit two-sided PSD
    let n_samples = n + 1;
    let mut het = Vec::with_capacity(n_samples);
    let weight = |nbar: f64, j: usize| {
        (8.0 * config.drive.epsilon * nbar / config.drive.kappa).sqrt() * osc[j].g
    };
    let mut rng = shot_noise.map(|idx| config.rng().stream(stream::SHOT_NOISE, idx));
    let noise_sigma = 1.0 / dt.sqrt();
    for i in 0..n_samples {
        let t = i as f64 * dt;
        let (nbar, _) = run.waveform.eval(t);
        let mut v = weight(nbar, 0) * z[0][i] / z_ho[0] + weight(nbar, 1) * z[1][i] / z_ho[1];
        if let Some(r) = rng.as_mut() {
            let g: f64 = r.sample(StandardNormal);
            v += noise_sigma * g;
        }
        het.push(v);
    }

    Ok(TraceSet {
        dt,
        z,
        het,
        schedule_applied: run.waveform,
        readout_start: run.readout_start,
        readout_velocity,
    })
}

/// Complex read-out phasors Z_j at the read-out plateau start, extracted
/// directly from the simulated phase-space point. This is the noiseless
/// matched-filter limit: Z_j is the coefficient of the damped template
/// e^{(iω̃_j − Γ_j/2)(t − t_r)} in z_j / (2 Z_HO,j).
pub fn readout_phasors(trace: &TraceSet, osc: &[OscillatorParams; 2]) -> [C64; 2] {
    let idx = (trace.readout_start / trace.dt).round() as usize;
    let idx = idx.min(trace.len() - 1);
    let (nbar, _) = trace.schedule_applied.eval(trace.readout_start);
    let mut out = [C64::ZERO; 2];
    for j in 0..2 {
        let z_ho = osc[j].zero_point_length();
        let w_eff = osc[j].effective_omega(nbar);
        let gamma_half = osc[j].gamma / 2.0;
        let re = trace.z[j][idx] / (2.0 * z_ho);
        let im = (trace.readout_velocity[j] / (2.0 * z_ho) + gamma_half * re) / w_eff;
        // conjugate: Z is the coefficient of the e^{+iωt} template
        out[j] = C64::new(re, -im);
    }
    out
}

/// Fraction of the coherent excitation residing in the high-frequency
/// oscillator at read-out, |Z₂|²/(|Z₁|² + |Z₂|²).
pub fn transfer_fraction(trace: &TraceSet, osc: &[OscillatorParams; 2]) -> f64 {
    let z = readout_phasors(trace, osc);
    let p = [z[0].norm_sqr(), z[1].norm_sqr()];
    p[1] / (p[0] + p[1])
}

/// Monte-Carlo endpoint ensemble over Gaussian parameter uncertainties.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Coupling hold times (s).
    pub tau_c: Vec<f64>,
    /// Mean endpoint phasors ⟨Z₁⟩, ⟨Z₂⟩ per hold time.
    pub mean: Vec<[C64; 2]>,
    /// Per-oscillator covariance of (Re Z, Im Z): (var_re, var_im, cov).
    pub cov: Vec<[[f64; 3]; 2]>,
    /// 1σ uncertainty-ellipse areas per oscillator, π·σ₁σ₂.
    pub area: Vec<[f64; 2]>,
    /// Samples requested per hold time.
    pub n_samples: usize,
    /// Fraction of samples discarded as dynamically unstable.
    pub discard_fraction: f64,
}

/// Repeat the pulse protocol over Gaussian-perturbed parameters
/// {g_j, n̄, ω_j, Δ_pc, ν_th,j, Γ_j, M_j} and collect the endpoint cloud for
/// every hold time. Deterministic: each sample draws from its own RNG
/// stream, so the result is independent of worker count and scheduling.
pub fn monte_carlo(config: &SystemConfig, tau_cs: &[f64]) -> EnsembleResult {
    let n_samples = config.ensemble.n_samples.max(2);
    let dt = default_dt(&config.osc);
    let streams = config.rng();

    let per_sample: Vec<Option<Vec<[C64; 2]>>> = (0..n_samples)
        .into_par_iter()
        .map(|sample| {
            let mut rng = streams.stream(stream::MC_PARAMS, sample as u64);
            let sigma = config.ensemble.sigma;
            let mut draw = |s: f64| -> f64 {
                let g: f64 = rng.sample(StandardNormal);
                (1.0 + s * g).max(0.05)
            };
            let mut cfg = config.clone();
            for j in 0..2 {
                cfg.osc[j].g *= draw(sigma.g);
                cfg.osc[j].omega *= draw(sigma.omega);
                cfg.osc[j].nu_th *= draw(sigma.nu_th);
                cfg.osc[j].gamma *= draw(sigma.gamma);
                cfg.osc[j].mass *= draw(sigma.mass);
            }
            let nbar_scale = draw(sigma.nbar);
            let delta_scale = draw(sigma.delta_pc);
            if cfg.osc[0].omega >= cfg.osc[1].omega {
                // ordering convention violated by an extreme draw
                return None;
            }
            let mut endpoints = Vec::with_capacity(tau_cs.len());
            for &tau in tau_cs {
                let mut schedule = crate::model::pulse_protocol(&cfg.osc, tau);
                for seg in schedule.segments.iter_mut() {
                    seg.nbar *= nbar_scale;
                    seg.delta_pc *= delta_scale;
                }
                match simulate_schedule(&cfg, &schedule, [0.0; 4], None, dt) {
                    Ok(trace) => endpoints.push(readout_phasors(&trace, &cfg.osc)),
                    Err(_) => return None,
                }
            }
            Some(endpoints)
        })
        .collect();

    let kept: Vec<&Vec<[C64; 2]>> = per_sample.iter().flatten().collect();
    let discarded = n_samples - kept.len();
    let mut mean = Vec::with_capacity(tau_cs.len());
    let mut cov = Vec::with_capacity(tau_cs.len());
    let mut area = Vec::with_capacity(tau_cs.len());
    for (ti, _) in tau_cs.iter().enumerate() {
        let mut m = [C64::ZERO; 2];
        for s in &kept {
            for j in 0..2 {
                m[j] += s[ti][j];
            }
        }
        for mj in m.iter_mut() {
            *mj /= kept.len().max(1) as f64;
        }
        let mut c = [[0.0f64; 3]; 2];
        for s in &kept {
            for j in 0..2 {
                let dre = s[ti][j].re - m[j].re;
                let dim = s[ti][j].im - m[j].im;
                c[j][0] += dre * dre;
                c[j][1] += dim * dim;
                c[j][2] += dre * dim;
            }
        }
        let denom = (kept.len().max(2) - 1) as f64;
        for cj in c.iter_mut() {
            for v in cj.iter_mut() {
                *v /= denom;
            }
        }
        let a = [0, 1].map(|j| {
            let det = c[j][0] * c[j][1] - c[j][2] * c[j][2];
            std::f64::consts::PI * det.max(0.0).sqrt()
        });
        mean.push(m);
        cov.push(c);
        area.push(a);
    }
    EnsembleResult {
        tau_c: tau_cs.to_vec(),
        mean,
        cov,
        area,
        n_samples,
        discard_fraction: discarded as f64 / n_samples as f64,
    }
}

fn add_scaled(y: &[f64; 4], k: &[f64; 4], h: f64) -> [f64; 4] {
    [
        y[0] + h * k[0],
        y[1] + h * k[1],
        y[2] + h * k[2],
        y[3] + h * k[3],
    ]
}
