//! Physical parameters, unit conventions, pulse schedules and calibration
//! helpers shared by every other module.
//!
//! Conventions:
//!
//! * every frequency is stored internally as an angular frequency (rad/s);
//!   config files carry ordinary frequencies in Hz and are converted exactly
//!   once at ingestion,
//! * `gamma` is the energy damping rate (the spectral full width), so a
//!   ring-down amplitude decays at `gamma / 2`,
//! * `delta_pc > 0` means the pump is blue of the cavity resonance, which
//!   stiffens the mechanical modes and heats them through backaction,
//! * masses are config inputs; [`mass_from_atoms`] converts an atom count
//!   per lattice site into a total mass.

use std::f64::consts::TAU;
use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Mass of a single ⁸⁷Rb atom (kg).
pub const RB87_MASS: f64 = 1.443_160_6e-25;

/// Convert an ordinary frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn hz(f: f64) -> f64 {
    TAU * f
}

/// Convert an angular frequency in rad/s back to Hz.
#[inline]
pub fn to_hz(w: f64) -> f64 {
    w / TAU
}

/// Total mass of `n_atoms` ⁸⁷Rb atoms trapped in one lattice site (kg).
pub fn mass_from_atoms(n_atoms: f64) -> f64 {
    n_atoms * RB87_MASS
}

/// Mechanical and optomechanical constants of a single oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    /// Mechanical angular frequency ω (rad/s).
    pub omega: f64,
    /// Energy damping rate Γ (rad/s, spectral full width).
    pub gamma: f64,
    /// Single-photon/single-phonon coupling frequency g (rad/s).
    pub g: f64,
    /// Total mass M of the trapped ensemble (kg).
    pub mass: f64,
    /// Thermal bath occupation ν_th (phonons).
    pub nu_th: f64,
    /// Quadratic-coupling trap shift per intracavity photon (rad/s per
    /// photon, signed).
    pub omega_q: f64,
}

impl OscillatorParams {
    /// Zero-point length Z_HO = sqrt(ħ / (2 M ω)) in metres.
    pub fn zero_point_length(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega)).sqrt()
    }

    /// Trap frequency including the quadratic-coupling shift at mean photon
    /// number `nbar`.
    pub fn effective_omega(&self, nbar: f64) -> f64 {
        self.omega + self.omega_q * nbar
    }
}

/// Zero-point length of an oscillator (m). Free-function form of
/// [`OscillatorParams::zero_point_length`].
pub fn zho(osc: &OscillatorParams) -> f64 {
    osc.zero_point_length()
}

/// Cavity drive and detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityDrive {
    /// Cavity half-linewidth κ (rad/s).
    pub kappa: f64,
    /// Mean intracavity photon number n̄.
    pub nbar: f64,
    /// Pump–cavity detuning Δ_pc (rad/s, pump minus cavity, blue positive).
    pub delta_pc: f64,
    /// Heterodyne detection efficiency ε ∈ (0, 1].
    pub epsilon: f64,
}

impl CavityDrive {
    /// Same cavity, different operating point.
    pub fn at(&self, nbar: f64, delta_pc: f64) -> CavityDrive {
        CavityDrive {
            nbar,
            delta_pc,
            ..*self
        }
    }
}

/// Optomechanical cooperativity C = 4 n̄ g² / (κ Γ).
pub fn cooperativity(osc: &OscillatorParams, drive: &CavityDrive) -> f64 {
    4.0 * drive.nbar * osc.g * osc.g / (drive.kappa * osc.gamma)
}

/// Atom number from the average dispersive cavity shift,
/// N_a = 2 Δω_c Δ_ca / g₀².
pub fn atom_number_from_shift(delta_omega_c: f64, g0: f64, delta_ca: f64) -> Result<f64, ModelError> {
    if g0 == 0.0 {
        return Err(ModelError::DivisionByZero("g0"));
    }
    if delta_ca == 0.0 {
        return Err(ModelError::DivisionByZero("delta_ca"));
    }
    Ok(2.0 * delta_omega_c * delta_ca / (g0 * g0))
}

/// Forward form of the dispersive shift, Δω_c = N_a g₀² / (2 Δ_ca).
pub fn cavity_shift_from_atoms(n_atoms: f64, g0: f64, delta_ca: f64) -> f64 {
    n_atoms * g0 * g0 / (2.0 * delta_ca)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("division by zero: {0} must be nonzero")]
    DivisionByZero(&'static str),
}

/// How a schedule segment approaches its target drive settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ramp {
    /// Jump to the target instantaneously at the segment start.
    Step,
    /// Ramp linearly from the previous settings over `duration` seconds.
    Linear { duration: f64 },
}

/// Default linear ramp duration used to switch the optical spring on and off
/// without kicking the oscillators (s).
pub const DEFAULT_RAMP_S: f64 = 20e-6;

impl Ramp {
    pub fn linear_default() -> Ramp {
        Ramp::Linear {
            duration: DEFAULT_RAMP_S,
        }
    }
}

/// Envelope of the coherent excitation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Envelope {
    Rect,
    Blackman,
}

/// Resonant modulation pulse applied to the trap at the start of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    /// Carrier angular frequency ω_excite (rad/s).
    pub omega: f64,
    /// Number of carrier cycles in the pulse.
    pub n_cycles: u32,
    /// Envelope shape.
    pub envelope: Envelope,
    /// Target coherent displacement amplitude of the resonant oscillator (m).
    pub amplitude: f64,
}

impl Excitation {
    /// Pulse duration in seconds.
    pub fn duration(&self) -> f64 {
        self.n_cycles as f64 * TAU / self.omega
    }
}

/// One segment of a drive schedule: ramp towards the target settings, then
/// hold them until the segment ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Total segment duration including its leading ramp (s).
    pub duration: f64,
    /// Target mean photon number.
    pub nbar: f64,
    /// Target pump–cavity detuning (rad/s).
    pub delta_pc: f64,
    /// Ramp shape at the segment start.
    pub ramp: Ramp,
}

/// Full drive schedule of a pulsed run: excite → couple → read out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
    pub excitation: Option<Excitation>,
}

impl PulseSchedule {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Piecewise-linear drive waveform resolved from a schedule. The first
/// segment starts directly at its own targets; later segments ramp from the
/// previous settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveWaveform {
    pieces: Vec<Piece>,
    t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    t0: f64,
    t1: f64,
    nbar0: f64,
    nbar1: f64,
    delta0: f64,
    delta1: f64,
}

impl DriveWaveform {
    /// Resolve a schedule into breakpoints.
    pub fn resolve(schedule: &PulseSchedule) -> DriveWaveform {
        let mut pieces = Vec::new();
        let mut t = 0.0;
        let mut nbar = schedule.segments.first().map_or(0.0, |s| s.nbar);
        let mut delta = schedule.segments.first().map_or(0.0, |s| s.delta_pc);
        for (i, seg) in schedule.segments.iter().enumerate() {
            let ramp = match seg.ramp {
                Ramp::Step => 0.0,
                Ramp::Linear { duration } => duration.min(seg.duration),
            };
            if i > 0 && ramp > 0.0 {
                pieces.push(Piece {
                    t0: t,
                    t1: t + ramp,
                    nbar0: nbar,
                    nbar1: seg.nbar,
                    delta0: delta,
                    delta1: seg.delta_pc,
                });
            }
            let hold_start = if i == 0 { t } else { t + ramp };
            pieces.push(Piece {
                t0: hold_start,
                t1: t + seg.duration,
                nbar0: seg.nbar,
                nbar1: seg.nbar,
                delta0: seg.delta_pc,
                delta1: seg.delta_pc,
            });
            nbar = seg.nbar;
            delta = seg.delta_pc;
            t += seg.duration;
        }
        DriveWaveform { pieces, t_end: t }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Drive settings (n̄, Δ_pc) at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if self.pieces.is_empty() {
            return (0.0, 0.0);
        }
        let last = self.pieces.len() - 1;
        if t >= self.pieces[last].t1 {
            let p = &self.pieces[last];
            return (p.nbar1, p.delta1);
        }
        for p in &self.pieces {
            if t < p.t1 {
                if p.t1 <= p.t0 {
                    return (p.nbar1, p.delta1);
                }
                let u = ((t - p.t0) / (p.t1 - p.t0)).clamp(0.0, 1.0);
                return (
                    p.nbar0 + u * (p.nbar1 - p.nbar0),
                    p.delta0 + u * (p.delta1 - p.delta0),
                );
            }
        }
        let p = &self.pieces[last];
        (p.nbar1, p.delta1)
    }

    /// Start times and plateau settings of each hold region, used for
    /// segment-wise stability checks.
    pub fn plateaus(&self) -> Vec<(f64, f64, f64)> {
        self.pieces
            .iter()
            .filter(|p| p.nbar0 == p.nbar1 && p.delta0 == p.delta1)
            .map(|p| (p.t0, p.nbar0, p.delta0))
            .collect()
    }
}

/// Monte-Carlo ensemble settings: number of samples and relative 1σ
/// uncertainties applied per parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSettings {
    pub n_samples: usize,
    pub sigma: ParamSigmas,
}

/// Relative 1σ uncertainties of the experimental parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamSigmas {
    pub g: f64,
    pub nbar: f64,
    pub omega: f64,
    pub delta_pc: f64,
    pub nu_th: f64,
    pub gamma: f64,
    pub mass: f64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings {
            n_samples: 300,
            sigma: ParamSigmas::default(),
        }
    }
}

/// Complete configuration of a run: exactly two oscillators (index 0 is the
/// low-frequency one), the cavity drive, a pulse schedule, the RNG seed and
/// Monte-Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub osc: [OscillatorParams; 2],
    pub drive: CavityDrive,
    pub schedule: PulseSchedule,
    pub seed: u64,
    pub ensemble: EnsembleSettings,
}

/// Derived, reproducible RNG streams. Every stochastic operation draws from
/// a stream keyed by a domain tag and an index, so full runs are bit
/// reproducible regardless of thread count or scheduling.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

/// Stream domain tags.
pub mod stream {
    pub const SHOT_NOISE: u32 = 1;
    pub const MC_PARAMS: u32 = 2;
    pub const WIGNER: u32 = 3;
    pub const TEST: u32 = 99;
}

impl RngStreams {
    pub fn new(seed: u64) -> RngStreams {
        RngStreams { seed }
    }

    /// A generator for stream (`domain`, `index`), independent of all other
    /// streams derived from the same master seed.
    pub fn stream(&self, domain: u32, index: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(((domain as u64) << 48) ^ index);
        rng
    }
}

impl SystemConfig {
    pub fn rng(&self) -> RngStreams {
        RngStreams::new(self.seed)
    }
}

// ---------------------------------------------------------------------------
// Paper-default parameter set and protocol builders
// ---------------------------------------------------------------------------

/// Probe operating point: on-resonance, weak.
pub const PROBE_NBAR: f64 = 2.0;
/// Coupling-pulse photon number.
pub const COUPLE_NBAR: f64 = 8.0;

/// Coupling-pulse detuning (rad/s).
pub fn couple_delta_pc() -> f64 {
    hz(1.4e6)
}

/// Default parameter set of the two-ensemble experiment: ω/2π = 110 and
/// 116.4 kHz, Γ/2π = 1.5 kHz, g/2π = 24 kHz, κ/2π = 1.82 MHz, ν_th = 1.5,
/// ε = 0.05, M = 1.30e-22 kg and quadratic shifts of −40 and +208 Hz per
/// photon.
pub fn paper_defaults() -> SystemConfig {
    let osc = [
        OscillatorParams {
            omega: hz(110e3),
            gamma: hz(1.5e3),
            g: hz(24e3),
            mass: 1.30e-22,
            nu_th: 1.5,
            omega_q: hz(-40.0),
        },
        OscillatorParams {
            omega: hz(116.4e3),
            gamma: hz(1.5e3),
            g: hz(24e3),
            mass: 1.30e-22,
            nu_th: 1.5,
            omega_q: hz(208.0),
        },
    ];
    let drive = CavityDrive {
        kappa: hz(1.82e6),
        nbar: PROBE_NBAR,
        delta_pc: 0.0,
        epsilon: 0.05,
    };
    let schedule = pulse_protocol(&osc, 50e-6);
    SystemConfig {
        osc,
        drive,
        schedule,
        seed: 20260808,
        ensemble: EnsembleSettings {
            n_samples: 300,
            sigma: ParamSigmas {
                g: 0.05,
                nbar: 0.05,
                ..ParamSigmas::default()
            },
        },
    }
}

/// Read-out window length: five amplitude decay times of the slower
/// oscillator.
pub fn readout_window(osc: &[OscillatorParams; 2]) -> f64 {
    let gamma_min = osc[0].gamma.min(osc[1].gamma);
    5.0 * 2.0 / gamma_min
}

/// Build the three-step excite / couple(τ_c) / read-out schedule. A
/// `tau_c` of exactly zero skips the coupling pulse entirely (no ramps), so
/// the run stays at the probe settings throughout.
pub fn pulse_protocol(osc: &[OscillatorParams; 2], tau_c: f64) -> PulseSchedule {
    let excitation = Excitation {
        omega: osc[0].omega,
        n_cycles: 50,
        envelope: Envelope::Blackman,
        amplitude: 3.0 * osc[0].zero_point_length(),
    };
    let excite_len = excitation.duration() + 20e-6;
    let mut segments = vec![Segment {
        duration: excite_len,
        nbar: PROBE_NBAR,
        delta_pc: 0.0,
        ramp: Ramp::Step,
    }];
    if tau_c > 0.0 {
        segments.push(Segment {
            duration: DEFAULT_RAMP_S + tau_c,
            nbar: COUPLE_NBAR,
            delta_pc: couple_delta_pc(),
            ramp: Ramp::linear_default(),
        });
    }
    segments.push(Segment {
        duration: DEFAULT_RAMP_S + readout_window(osc),
        nbar: PROBE_NBAR,
        delta_pc: 0.0,
        ramp: if tau_c > 0.0 {
            Ramp::linear_default()
        } else {
            Ramp::Step
        },
    });
    PulseSchedule {
        segments,
        excitation: Some(excitation),
    }
}

// ---------------------------------------------------------------------------
// Config file I/O (JSON, ordinary frequencies in Hz)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawConfig {
    oscillators: Vec<RawOsc>,
    drive: RawDrive,
    #[serde(default)]
    schedule: RawSchedule,
    #[serde(default)]
    ensemble: RawEnsemble,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawOsc {
    omega_hz: f64,
    gamma_hz: f64,
    g_hz: f64,
    mass_kg: f64,
    nu_th: f64,
    #[serde(default)]
    omega_q_hz_per_photon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDrive {
    kappa_hz: f64,
    nbar: f64,
    delta_pc_hz: f64,
    epsilon: f64,
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct RawSchedule {
    #[serde(default)]
    segments: Vec<RawSegment>,
    #[serde(default)]
    excitation: Option<RawExcitation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSegment {
    duration_s: f64,
    nbar: f64,
    delta_pc_hz: f64,
    #[serde(default = "default_ramp")]
    ramp: RawRamp,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawRamp {
    Step,
    Linear {
        #[serde(default = "default_ramp_duration")]
        duration_s: f64,
    },
}

fn default_ramp() -> RawRamp {
    RawRamp::Step
}

fn default_ramp_duration() -> f64 {
    DEFAULT_RAMP_S
}

#[derive(Debug, Serialize, Deserialize)]
struct RawExcitation {
    omega_hz: f64,
    n_cycles: u32,
    envelope: String,
    amplitude_m: f64,
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct RawEnsemble {
    #[serde(default = "default_samples")]
    n_samples: usize,
    #[serde(default)]
    sigma_rel: RawSigmas,
}

fn default_samples() -> usize {
    300
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct RawSigmas {
    #[serde(default)]
    g: f64,
    #[serde(default)]
    nbar: f64,
    #[serde(default)]
    omega: f64,
    #[serde(default)]
    delta_pc: f64,
    #[serde(default)]
    nu_th: f64,
    #[serde(default)]
    gamma: f64,
    #[serde(default)]
    mass: f64,
}

/// A single validation failure with the offending config field.
#[derive(Debug, Clone, Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[FieldIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Parse(_) => &[],
        }
    }
}

impl SystemConfig {
    /// Parse and validate a JSON config. Frequencies are given in Hz and
    /// converted to angular units here, exactly once.
    pub fn from_json_str(text: &str) -> Result<SystemConfig, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let mut issues = Vec::new();
        if raw.oscillators.len() != 2 {
            issues.push(FieldIssue {
                field: "oscillators".into(),
                message: format!("exactly two oscillators required, got {}", raw.oscillators.len()),
            });
            return Err(ConfigError::Invalid(issues));
        }
        let mut osc = Vec::with_capacity(2);
        for (i, ro) in raw.oscillators.iter().enumerate() {
            let field = |name: &str| format!("oscillators[{i}].{name}");
            check_pos(&mut issues, field("omega"), ro.omega_hz);
            check_pos(&mut issues, field("gamma"), ro.gamma_hz);
            check_pos(&mut issues, field("mass"), ro.mass_kg);
            check_nonneg(&mut issues, field("nu_th"), ro.nu_th);
            if !ro.g_hz.is_finite() {
                issues.push(FieldIssue {
                    field: field("g"),
                    message: "must be finite".into(),
                });
            }
            osc.push(OscillatorParams {
                omega: hz(ro.omega_hz),
                gamma: hz(ro.gamma_hz),
                g: hz(ro.g_hz),
                mass: ro.mass_kg,
                nu_th: ro.nu_th,
                omega_q: hz(ro.omega_q_hz_per_photon),
            });
        }
        if osc.len() == 2 && osc[0].omega >= osc[1].omega {
            issues.push(FieldIssue {
                field: "oscillators".into(),
                message: "oscillators[0].omega must be below oscillators[1].omega".into(),
            });
        }
        check_pos(&mut issues, "drive.kappa".into(), raw.drive.kappa_hz);
        check_nonneg(&mut issues, "drive.nbar".into(), raw.drive.nbar);
        if !(raw.drive.epsilon > 0.0 && raw.drive.epsilon <= 1.0) {
            issues.push(FieldIssue {
                field: "drive.epsilon".into(),
                message: format!("must be in (0, 1], got {}", raw.drive.epsilon),
            });
        }
        let drive = CavityDrive {
            kappa: hz(raw.drive.kappa_hz),
            nbar: raw.drive.nbar,
            delta_pc: hz(raw.drive.delta_pc_hz),
            epsilon: raw.drive.epsilon,
        };
        let mut segments = Vec::new();
        for (i, rs) in raw.schedule.segments.iter().enumerate() {
            let field = |name: &str| format!("schedule.segments[{i}].{name}");
            check_pos(&mut issues, field("duration_s"), rs.duration_s);
            check_nonneg(&mut issues, field("nbar"), rs.nbar);
            let ramp = match rs.ramp {
                RawRamp::Step => Ramp::Step,
                RawRamp::Linear { duration_s } => {
                    check_pos(&mut issues, field("ramp.duration_s"), duration_s);
                    if duration_s > rs.duration_s {
                        issues.push(FieldIssue {
                            field: field("ramp.duration_s"),
                            message: "ramp longer than its segment".into(),
                        });
                    }
                    Ramp::Linear {
                        duration: duration_s,
                    }
                }
            };
            segments.push(Segment {
                duration: rs.duration_s,
                nbar: rs.nbar,
                delta_pc: hz(rs.delta_pc_hz),
                ramp,
            });
        }
        let excitation = match &raw.schedule.excitation {
            None => None,
            Some(re) => {
                check_pos(&mut issues, "schedule.excitation.omega".into(), re.omega_hz);
                if re.n_cycles < 1 {
                    issues.push(FieldIssue {
                        field: "schedule.excitation.n_cycles".into(),
                        message: "must be at least 1".into(),
                    });
                }
                let envelope = match re.envelope.as_str() {
                    "rect" => Envelope::Rect,
                    "blackman" => Envelope::Blackman,
                    other => {
                        issues.push(FieldIssue {
                            field: "schedule.excitation.envelope".into(),
                            message: format!("unknown envelope `{other}` (expected rect|blackman)"),
                        });
                        Envelope::Rect
                    }
                };
                Some(Excitation {
                    omega: hz(re.omega_hz),
                    n_cycles: re.n_cycles.max(1),
                    envelope,
                    amplitude: re.amplitude_m,
                })
            }
        };
        for (name, v) in [
            ("g", raw.ensemble.sigma_rel.g),
            ("nbar", raw.ensemble.sigma_rel.nbar),
            ("omega", raw.ensemble.sigma_rel.omega),
            ("delta_pc", raw.ensemble.sigma_rel.delta_pc),
            ("nu_th", raw.ensemble.sigma_rel.nu_th),
            ("gamma", raw.ensemble.sigma_rel.gamma),
            ("mass", raw.ensemble.sigma_rel.mass),
        ] {
            check_nonneg(&mut issues, format!("ensemble.sigma_rel.{name}"), v);
        }
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        Ok(SystemConfig {
            osc: [osc[0], osc[1]],
            drive,
            schedule: PulseSchedule {
                segments,
                excitation,
            },
            seed: raw.seed,
            ensemble: EnsembleSettings {
                n_samples: raw.ensemble.n_samples,
                sigma: ParamSigmas {
                    g: raw.ensemble.sigma_rel.g,
                    nbar: raw.ensemble.sigma_rel.nbar,
                    omega: raw.ensemble.sigma_rel.omega,
                    delta_pc: raw.ensemble.sigma_rel.delta_pc,
                    nu_th: raw.ensemble.sigma_rel.nu_th,
                    gamma: raw.ensemble.sigma_rel.gamma,
                    mass: raw.ensemble.sigma_rel.mass,
                },
            },
        })
    }

    /// Serialize back to the Hz-based JSON schema.
    pub fn to_json_string(&self) -> String {
        let raw = RawConfig {
            oscillators: self
                .osc
                .iter()
                .map(|o| RawOsc {
                    omega_hz: to_hz(o.omega),
                    gamma_hz: to_hz(o.gamma),
                    g_hz: to_hz(o.g),
                    mass_kg: o.mass,
                    nu_th: o.nu_th,
                    omega_q_hz_per_photon: to_hz(o.omega_q),
                })
                .collect(),
            drive: RawDrive {
                kappa_hz: to_hz(self.drive.kappa),
                nbar: self.drive.nbar,
                delta_pc_hz: to_hz(self.drive.delta_pc),
                epsilon: self.drive.epsilon,
            },
            schedule: RawSchedule {
                segments: self
                    .schedule
                    .segments
                    .iter()
                    .map(|s| RawSegment {
                        duration_s: s.duration,
                        nbar: s.nbar,
                        delta_pc_hz: to_hz(s.delta_pc),
                        ramp: match s.ramp {
                            Ramp::Step => RawRamp::Step,
                            Ramp::Linear { duration } => RawRamp::Linear {
                                duration_s: duration,
                            },
                        },
                    })
                    .collect(),
                excitation: self.schedule.excitation.map(|e| RawExcitation {
                    omega_hz: to_hz(e.omega),
                    n_cycles: e.n_cycles,
                    envelope: match e.envelope {
                        Envelope::Rect => "rect".into(),
                        Envelope::Blackman => "blackman".into(),
                    },
                    amplitude_m: e.amplitude,
                }),
            },
            ensemble: RawEnsemble {
                n_samples: self.ensemble.n_samples,
                sigma_rel: RawSigmas {
                    g: self.ensemble.sigma.g,
                    nbar: self.ensemble.sigma.nbar,
                    omega: self.ensemble.sigma.omega,
                    delta_pc: self.ensemble.sigma.delta_pc,
                    nu_th: self.ensemble.sigma.nu_th,
                    gamma: self.ensemble.sigma.gamma,
                    mass: self.ensemble.sigma.mass,
                },
            },
            seed: self.seed,
        };
        serde_json::to_string_pretty(&raw).expect("config serialization cannot fail")
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
fn check_pos(issues: &mut Vec<FieldIssue>, field: String, v: f64) {
    if !(v > 0.0) || !v.is_finite() {
        issues.push(FieldIssue {
            field,
            message: format!("must be positive and finite, got {v}"),
        });
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
fn check_nonneg(issues: &mut Vec<FieldIssue>, field: String, v: f64) {
    if !(v >= 0.0) || !v.is_finite() {
        issues.push(FieldIssue {
            field,
            message: format!("must be nonnegative and finite, got {v}"),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_point_length_matches_direct_arithmetic() {
        let osc = paper_defaults().osc[0];
        // Independent evaluation of sqrt(ħ / (2 M ω)).
        let expected = (HBAR / (2.0 * 1.30e-22 * hz(110e3))).sqrt();
        assert_relative_eq!(osc.zero_point_length(), expected, max_relative = 1e-14);
        // About 0.8 nm for the trapped ensembles.
        assert!(osc.zero_point_length() > 0.7e-9 && osc.zero_point_length() < 0.9e-9);
    }

    #[test]
    fn zero_point_length_scaling() {
        let mut osc = paper_defaults().osc[0];
        let z = osc.zero_point_length();
        osc.mass *= 4.0;
        assert_relative_eq!(osc.zero_point_length(), z / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn mass_helper_gives_expected_total_mass() {
        // 900 atoms per well of ⁸⁷Rb.
        let m = mass_from_atoms(900.0);
        assert!((m - 1.30e-22).abs() / 1.30e-22 < 0.01);
    }

    #[test]
    fn cooperativity_at_typical_probe_settings() {
        let cfg = paper_defaults();
        let c = cooperativity(&cfg.osc[0], &cfg.drive.at(2.0, 0.0));
        // 4 n̄ g² / (κ Γ) with the defaults lands near 1.7, consistent with
        // the quoted C ≈ 2.
        let expected = 4.0 * 2.0 * hz(24e3).powi(2) / (hz(1.82e6) * hz(1.5e3));
        assert_relative_eq!(c, expected, max_relative = 1e-14);
        assert!((c - 2.0).abs() < 0.5);
    }

    #[test]
    fn cooperativity_is_linear_in_nbar() {
        let cfg = paper_defaults();
        let c1 = cooperativity(&cfg.osc[0], &cfg.drive.at(1.0, 0.0));
        let c2 = cooperativity(&cfg.osc[0], &cfg.drive.at(2.0, 0.0));
        assert_relative_eq!(c2, 2.0 * c1, max_relative = 1e-14);
        assert_eq!(cooperativity(&cfg.osc[0], &cfg.drive.at(0.0, 0.0)), 0.0);
    }

    #[test]
    fn pure_functions_are_bit_stable() {
        let cfg = paper_defaults();
        let a = cfg.osc[0].zero_point_length();
        let b = cfg.osc[0].zero_point_length();
        assert_eq!(a.to_bits(), b.to_bits());
        let c1 = cooperativity(&cfg.osc[1], &cfg.drive);
        let c2 = cooperativity(&cfg.osc[1], &cfg.drive);
        assert_eq!(c1.to_bits(), c2.to_bits());
    }

    #[test]
    fn atom_number_round_trips() {
        let g0 = hz(13e6);
        let dca = -hz(42e9);
        let shift = cavity_shift_from_atoms(1800.0, g0, dca);
        let n = atom_number_from_shift(shift, g0, dca).unwrap();
        assert_relative_eq!(n, 1800.0, max_relative = 1e-12);
        // No atoms, no shift.
        assert_eq!(atom_number_from_shift(0.0, g0, dca).unwrap(), 0.0);
        assert!(atom_number_from_shift(shift, 0.0, dca).is_err());
        assert!(atom_number_from_shift(shift, g0, 0.0).is_err());
    }

    #[test]
    fn config_round_trip_is_lossless() {
        let cfg = paper_defaults();
        let json = cfg.to_json_string();
        let back = SystemConfig::from_json_str(&json).unwrap();
        for i in 0..2 {
            assert_relative_eq!(back.osc[i].omega, cfg.osc[i].omega, max_relative = 1e-12);
            assert_relative_eq!(back.osc[i].gamma, cfg.osc[i].gamma, max_relative = 1e-12);
            assert_relative_eq!(back.osc[i].g, cfg.osc[i].g, max_relative = 1e-12);
            assert_relative_eq!(back.osc[i].omega_q, cfg.osc[i].omega_q, max_relative = 1e-12);
        }
        assert_relative_eq!(back.drive.kappa, cfg.drive.kappa, max_relative = 1e-12);
        assert_eq!(back.seed, cfg.seed);
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut json = serde_json::from_str::<serde_json::Value>(&paper_defaults().to_json_string()).unwrap();
        json["oscillators"][0]["gamma_hz"] = serde_json::json!(-1.0);
        let err = SystemConfig::from_json_str(&json.to_string()).unwrap_err();
        let issues = err.issues();
        assert!(issues.iter().any(|i| i.field == "oscillators[0].gamma"));
    }

    #[test]
    fn waveform_ramps_linearly_between_segments() {
        let schedule = PulseSchedule {
            segments: vec![
                Segment {
                    duration: 100e-6,
                    nbar: 2.0,
                    delta_pc: 0.0,
                    ramp: Ramp::Step,
                },
                Segment {
                    duration: 60e-6,
                    nbar: 8.0,
                    delta_pc: hz(1.4e6),
                    ramp: Ramp::linear_default(),
                },
            ],
            excitation: None,
        };
        let wf = DriveWaveform::resolve(&schedule);
        assert_eq!(wf.eval(50e-6), (2.0, 0.0));
        let (n_mid, d_mid) = wf.eval(110e-6);
        assert_relative_eq!(n_mid, 5.0, max_relative = 1e-9);
        assert_relative_eq!(d_mid, hz(0.7e6), max_relative = 1e-9);
        let (n_end, d_end) = wf.eval(140e-6);
        assert_relative_eq!(n_end, 8.0, max_relative = 1e-12);
        assert_relative_eq!(d_end, hz(1.4e6), max_relative = 1e-12);
    }
}
