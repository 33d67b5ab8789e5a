//! Reduced second-moment dynamics of the two phonon modes under the
//! cavity-mediated coupling.
//!
//! The cavity is eliminated adiabatically, leaving a co-rotating-frame
//! master equation for the mechanical modes with
//!
//! * coherent frequency shifts δΩ_i and an exchange coupling J (the quantum
//!   side of the optical spring),
//! * single-oscillator heating/cooling rates Γ±^(j) plus the mechanical
//!   baths Γ_j(ν_th,j + 1), Γ_j ν_th,j,
//! * correlated decay/excitation channels at rates Γ± shared by both
//!   oscillators — the source of cross-oscillator noise correlations.
//!
//! The equations of motion are quadratic, so first and second moments close
//! exactly and the means decouple from the central (incoherent) moments.
//! The integrator below exploits that split, RK4 on 14 real components:
//!
//! * the means carry the explicit e^{±i(ω₁−ω₂)t} phases of the exchange
//!   coupling, so coherent transfer Rabi-oscillates at the full
//!   generalized splitting sqrt(4J² + (ω₁−ω₂+δΩ₁−δΩ₂)²);
//! * the incoherent block (occupations, cross and anomalous correlators)
//!   evolves under the static generator, all rates and couplings evaluated
//!   at t = 0. The correlated channels then pump the cross correlator
//!   steadily, which is what builds the backaction correlations up during
//!   the coupling pulse.
//!
//! Terms rotating at ±(ω₁+ω₂) are dropped; [`rwa_margin`] checks that they
//! are fast compared to every kept rate.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::{CavityDrive, OscillatorParams};

/// Cavity-induced rates and shifts evaluated at one drive operating point.
///
/// Sign conventions: `delta_omega` and `j_coupling` are positive for a blue
/// detuned pump (mechanical stiffening), and `gamma_plus > gamma_minus`
/// there as well (backaction heating, anti-damping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRates {
    /// Single-oscillator excitation rates Γ₊^(j) (rad/s).
    pub gamma_plus: [f64; 2],
    /// Single-oscillator decay rates Γ₋^(j) (rad/s).
    pub gamma_minus: [f64; 2],
    /// Correlated excitation rate Γ₊ = (Γ₊^(1)+Γ₊^(2))/2.
    pub gamma_plus_cross: f64,
    /// Correlated decay rate Γ₋ = (Γ₋^(1)+Γ₋^(2))/2.
    pub gamma_minus_cross: f64,
    /// Coherent frequency shifts δΩ_i (rad/s).
    pub delta_omega: [f64; 2],
    /// Exchange coupling J (rad/s).
    pub j_coupling: f64,
}

/// Evaluate the cavity-induced rates at a drive point. All expressions keep
/// the full sideband denominators κ² + (Δ_pc ∓ ω_j)².
pub fn coupling_rates(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> CouplingRates {
    let kappa = drive.kappa;
    let nbar = drive.nbar;
    let delta = drive.delta_pc;
    let k2 = kappa * kappa;

    let mut gamma_plus = [0.0; 2];
    let mut gamma_minus = [0.0; 2];
    let mut delta_omega = [0.0; 2];
    for i in 0..2 {
        let g2n = osc[i].g * osc[i].g * nbar;
        let w = osc[i].omega;
        gamma_plus[i] = 2.0 * g2n * kappa / (k2 + (w - delta) * (w - delta));
        gamma_minus[i] = 2.0 * g2n * kappa / (k2 + (w + delta) * (w + delta));
        delta_omega[i] = g2n
            * ((delta + w) / (k2 + (delta + w) * (delta + w))
                + (delta - w) / (k2 + (delta - w) * (delta - w)));
    }
    let g12n = osc[0].g * osc[1].g * nbar;
    let w2 = osc[1].omega;
    let j_coupling = g12n
        * ((delta + w2) / (k2 + (delta + w2) * (delta + w2))
            + (delta - w2) / (k2 + (delta - w2) * (delta - w2)));
    CouplingRates {
        gamma_plus,
        gamma_minus,
        gamma_plus_cross: 0.5 * (gamma_plus[0] + gamma_plus[1]),
        gamma_minus_cross: 0.5 * (gamma_minus[0] + gamma_minus[1]),
        delta_omega,
        j_coupling,
    }
}

/// The full moment-equation generator at one instant: total damping per
/// mode, correlated damping, incoherent sources, Hamiltonian shifts and the
/// exchange coupling. The beat phase e^{i Δ_bare t} is applied separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generator {
    /// Total energy damping per mode, Γ_j + Γ₋^(j) − Γ₊^(j).
    pub gamma_tot: [f64; 2],
    /// Correlated damping Γ₋ − Γ₊ (negative at blue detuning).
    pub gamma_cross: f64,
    /// Incoherent source per mode, Γ₊^(j) + Γ_j ν_th,j.
    pub source: [f64; 2],
    /// Correlated incoherent source Γ₊.
    pub source_cross: f64,
    /// Hamiltonian diagonal shifts δΩ_i + ω_q,i n̄ (rad/s).
    pub ham_shift: [f64; 2],
    /// Exchange coupling J (rad/s).
    pub j: f64,
}

impl Generator {
    /// Build the generator from physical parameters at a drive point.
    pub fn from_drive(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> Generator {
        let r = coupling_rates(osc, drive);
        let mut gamma_tot = [0.0; 2];
        let mut source = [0.0; 2];
        let mut ham_shift = [0.0; 2];
        for i in 0..2 {
            gamma_tot[i] = osc[i].gamma + r.gamma_minus[i] - r.gamma_plus[i];
            source[i] = r.gamma_plus[i] + osc[i].gamma * osc[i].nu_th;
            ham_shift[i] = r.delta_omega[i] + osc[i].omega_q * drive.nbar;
        }
        Generator {
            gamma_tot,
            gamma_cross: r.gamma_minus_cross - r.gamma_plus_cross,
            source,
            source_cross: r.gamma_plus_cross,
            ham_shift,
            j: r.j_coupling,
        }
    }

    fn max_rate(&self, delta_bare: f64) -> f64 {
        let mut m: f64 = delta_bare.abs();
        for i in 0..2 {
            m = m
                .max(self.gamma_tot[i].abs())
                .max(self.source[i].abs())
                .max(self.ham_shift[i].abs());
        }
        m.max(self.j.abs()).max(self.gamma_cross.abs())
    }
}

/// First and second moments of the two phonon modes in the co-rotating
/// frame, tagged with the absolute time the frame phases refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    /// Absolute time of the state (s).
    pub t: f64,
    /// Mean amplitudes ⟨b̂₁⟩, ⟨b̂₂⟩.
    pub mean: [C64; 2],
    /// Occupations ⟨b̂_i† b̂_i⟩ (phonons).
    pub occ: [f64; 2],
    /// Cross correlator ⟨b̂₁† b̂₂⟩.
    pub cross: C64,
    /// Anomalous correlators ⟨b̂₁b̂₁⟩, ⟨b̂₂b̂₂⟩, ⟨b̂₁b̂₂⟩.
    pub anomalous: [C64; 3],
}

impl MomentState {
    /// Thermal state with occupations `nu` and no coherent amplitude.
    pub fn thermal(nu: [f64; 2]) -> MomentState {
        MomentState {
            t: 0.0,
            mean: [C64::ZERO; 2],
            occ: nu,
            cross: C64::ZERO,
            anomalous: [C64::ZERO; 3],
        }
    }

    /// Incoherent occupation, occ_i − |⟨b̂_i⟩|².
    pub fn incoherent_occ(&self, i: usize) -> f64 {
        self.occ[i] - self.mean[i].norm_sqr()
    }

    /// Incoherent cross correlator, ⟨b̂₁†b̂₂⟩ − ⟨b̂₁⟩*⟨b̂₂⟩.
    pub fn incoherent_cross(&self) -> C64 {
        self.cross - self.mean[0].conj() * self.mean[1]
    }

    /// Incoherent anomalous correlators.
    pub fn incoherent_anomalous(&self) -> [C64; 3] {
        [
            self.anomalous[0] - self.mean[0] * self.mean[0],
            self.anomalous[1] - self.mean[1] * self.mean[1],
            self.anomalous[2] - self.mean[0] * self.mean[1],
        ]
    }

}

/// Internal integration variables: means plus the central (incoherent)
/// second moments, which close among themselves for a quadratic master
/// equation.
#[derive(Debug, Clone, Copy)]
struct Internal {
    mean: [C64; 2],
    n: [f64; 2],
    c: C64,
    a: [C64; 3],
}

impl Internal {
    fn from_state(s: &MomentState) -> Internal {
        Internal {
            mean: s.mean,
            n: [s.incoherent_occ(0), s.incoherent_occ(1)],
            c: s.incoherent_cross(),
            a: s.incoherent_anomalous(),
        }
    }

    fn into_state(self, t: f64) -> MomentState {
        MomentState {
            t,
            mean: self.mean,
            occ: [
                self.n[0] + self.mean[0].norm_sqr(),
                self.n[1] + self.mean[1].norm_sqr(),
            ],
            cross: self.c + self.mean[0].conj() * self.mean[1],
            anomalous: [
                self.a[0] + self.mean[0] * self.mean[0],
                self.a[1] + self.mean[1] * self.mean[1],
                self.a[2] + self.mean[0] * self.mean[1],
            ],
        }
    }

    fn scaled(&self, f: f64) -> Internal {
        Internal {
            mean: [self.mean[0] * f, self.mean[1] * f],
            n: [self.n[0] * f, self.n[1] * f],
            c: self.c * f,
            a: [self.a[0] * f, self.a[1] * f, self.a[2] * f],
        }
    }

    fn plus(&self, o: &Internal) -> Internal {
        Internal {
            mean: [self.mean[0] + o.mean[0], self.mean[1] + o.mean[1]],
            n: [self.n[0] + o.n[0], self.n[1] + o.n[1]],
            c: self.c + o.c,
            a: [self.a[0] + o.a[0], self.a[1] + o.a[1], self.a[2] + o.a[2]],
        }
    }
}

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("integration step too coarse: dt * max rate = {0:.3} exceeds 0.05")]
    StepTooCoarse(f64),
    #[error("incoherent variance not strictly positive; correlation undefined")]
    DegenerateVariance,
}

/// Time derivative at absolute time `t`. `delta_bare` is the bare splitting
/// ω₂ − ω₁; the mean sector carries its frame phases, the incoherent sector
/// evolves under the static generator.
fn rhs(state: &Internal, gen: &Generator, delta_bare: f64, t: f64) -> Internal {
    let p = C64::from_polar(1.0, delta_bare * t);
    let pc = p.conj();
    let i = C64::I;

    let m1 = state.mean[0];
    let m2 = state.mean[1];
    let n1 = state.n[0];
    let n2 = state.n[1];
    let c = state.c;
    let [a1, a2, a12] = state.a;

    let d_mean = [
        (-i * gen.ham_shift[0] - 0.5 * gen.gamma_tot[0]) * m1
            + (-i * gen.j * pc - 0.5 * gen.gamma_cross) * m2,
        (-i * gen.ham_shift[1] - 0.5 * gen.gamma_tot[1]) * m2
            + (-i * gen.j * p - 0.5 * gen.gamma_cross) * m1,
    ];

    let exch = 2.0 * gen.j * c.im;
    let cross_damp = gen.gamma_cross * c.re;
    let d_n = [
        exch - gen.gamma_tot[0] * n1 + gen.source[0] - cross_damp,
        -exch - gen.gamma_tot[1] * n2 + gen.source[1] - cross_damp,
    ];

    let gbar = 0.5 * (gen.gamma_tot[0] + gen.gamma_tot[1]);
    let d_c = (-i * (gen.ham_shift[1] - gen.ham_shift[0]) - gbar) * c
        - i * gen.j * (n1 - n2)
        - 0.5 * gen.gamma_cross * (n1 + n2)
        + gen.source_cross;

    let d_a = [
        (-2.0 * i * gen.ham_shift[0] - gen.gamma_tot[0]) * a1
            + (-2.0 * i * gen.j - gen.gamma_cross) * a12,
        (-2.0 * i * gen.ham_shift[1] - gen.gamma_tot[1]) * a2
            + (-2.0 * i * gen.j - gen.gamma_cross) * a12,
        (-i * (gen.ham_shift[0] + gen.ham_shift[1]) - gbar) * a12
            - (i * gen.j + 0.5 * gen.gamma_cross) * (a1 + a2),
    ];

    Internal {
        mean: d_mean,
        n: d_n,
        c: d_c,
        a: d_a,
    }
}

/// Ratio of the discarded fast frequency ω₁+ω₂ to the largest kept rate.
/// The rotating-wave step is safe when this exceeds ~50.
pub fn rwa_margin(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> f64 {
    let r = coupling_rates(osc, drive);
    let fast = osc[0].omega + osc[1].omega;
    let slow = r
        .j_coupling
        .abs()
        .max(r.gamma_plus_cross)
        .max(r.gamma_minus_cross)
        .max(r.gamma_plus[0])
        .max(r.gamma_plus[1])
        .max(1e-300);
    fast / slow
}

/// Default moment-integrator step (s).
pub const DEFAULT_DT: f64 = 50e-9;

/// Advance the moments for `duration` under a time-dependent drive, RK4 with
/// the drive sampled at the substep times, so scheduled ramps are followed
/// exactly. Emits a one-time warning to stderr if the rotating-wave margin
/// drops below 50 anywhere along the way.
pub fn evolve<F>(
    state: &MomentState,
    osc: &[OscillatorParams; 2],
    drive_at: F,
    duration: f64,
    dt: f64,
) -> Result<MomentState, MomentError>
where
    F: Fn(f64) -> CavityDrive,
{
    let delta_bare = osc[1].omega - osc[0].omega;
    let osc_snapshot = *osc;
    check_rwa(osc, &drive_at(state.t));
    evolve_generator(
        state,
        move |t| Generator::from_drive(&osc_snapshot, &drive_at(t)),
        delta_bare,
        duration,
        dt,
        usize::MAX,
        &mut |_| {},
    )
}

/// Like [`evolve`], invoking `observe` on every `every`-th step and on the
/// final state.
pub fn evolve_sampled<F, O>(
    state: &MomentState,
    osc: &[OscillatorParams; 2],
    drive_at: F,
    duration: f64,
    dt: f64,
    every: usize,
    observe: &mut O,
) -> Result<MomentState, MomentError>
where
    F: Fn(f64) -> CavityDrive,
    O: FnMut(&MomentState),
{
    let delta_bare = osc[1].omega - osc[0].omega;
    let osc_snapshot = *osc;
    check_rwa(osc, &drive_at(state.t));
    evolve_generator(
        state,
        move |t| Generator::from_drive(&osc_snapshot, &drive_at(t)),
        delta_bare,
        duration,
        dt,
        every,
        observe,
    )
}

fn check_rwa(osc: &[OscillatorParams; 2], drive: &CavityDrive) {
    use std::sync::atomic::{AtomicBool, Ordering};
    static WARNED: AtomicBool = AtomicBool::new(false);
    if drive.nbar > 0.0 && rwa_margin(osc, drive) <= 50.0 && !WARNED.swap(true, Ordering::Relaxed) {
        eprintln!(
            "warning: rotating-wave margin (omega_1+omega_2)/max rate = {:.1} <= 50; \
             discarded fast terms may matter",
            rwa_margin(osc, drive)
        );
    }
}

/// Core integrator over an explicit generator schedule.
pub fn evolve_generator<G, O>(
    state: &MomentState,
    gen_at: G,
    delta_bare: f64,
    duration: f64,
    dt: f64,
    every: usize,
    observe: &mut O,
) -> Result<MomentState, MomentError>
where
    G: Fn(f64) -> Generator,
    O: FnMut(&MomentState),
{
    if duration <= 0.0 {
        return Ok(*state);
    }
    let n_steps = (duration / dt).round().max(1.0) as usize;
    let h = duration / n_steps as f64;
    let worst = (0..=8)
        .map(|k| {
            let t = state.t + duration * k as f64 / 8.0;
            gen_at(t).max_rate(delta_bare)
        })
        .fold(0.0, f64::max);
    if h * worst > 0.05 {
        return Err(MomentError::StepTooCoarse(h * worst));
    }

    let mut s = Internal::from_state(state);
    let mut t_now = state.t;
    for step in 0..n_steps {
        let t = state.t + step as f64 * h;
        let g1 = gen_at(t);
        let g2 = gen_at(t + 0.5 * h);
        let g4 = gen_at(t + h);
        let k1 = rhs(&s, &g1, delta_bare, t);
        let s2 = s.plus(&k1.scaled(0.5 * h));
        let k2 = rhs(&s2, &g2, delta_bare, t + 0.5 * h);
        let s3 = s.plus(&k2.scaled(0.5 * h));
        let k3 = rhs(&s3, &g2, delta_bare, t + 0.5 * h);
        let s4 = s.plus(&k3.scaled(h));
        let k4 = rhs(&s4, &g4, delta_bare, t + h);
        let incr = k1
            .plus(&k2.scaled(2.0))
            .plus(&k3.scaled(2.0))
            .plus(&k4)
            .scaled(h / 6.0);
        s = s.plus(&incr);
        t_now = state.t + (step + 1) as f64 * h;
        if (step + 1) % every.max(1) == 0 || step + 1 == n_steps {
            observe(&s.into_state(t_now));
        }
    }
    Ok(s.into_state(t_now))
}

/// Steady state under a constant drive, by relaxation from the thermal
/// state. At Δ_pc = 0 all cross terms vanish and the steady state is exact;
/// at finite detuning the occupations converge to the attractor.
pub fn steady_state(osc: &[OscillatorParams; 2], drive: &CavityDrive, dt: f64) -> MomentState {
    let gen = Generator::from_drive(osc, drive);
    let gamma_min = gen.gamma_tot[0]
        .abs()
        .max(0.05 * osc[0].gamma)
        .min(gen.gamma_tot[1].abs().max(0.05 * osc[1].gamma));
    let horizon = 25.0 / gamma_min;
    let init = MomentState::thermal([osc[0].nu_th, osc[1].nu_th]);
    evolve(&init, osc, |_| *drive, horizon, dt).expect("steady-state relaxation step")
}

/// Added incoherent phonons between two states, per oscillator. Coherent
/// amplitude is subtracted, so a pure displacement adds nothing.
pub fn added_phonons(before: &MomentState, after: &MomentState) -> [f64; 2] {
    [
        after.incoherent_occ(0) - before.incoherent_occ(0),
        after.incoherent_occ(1) - before.incoherent_occ(1),
    ]
}

/// Noise correlation r between the oscillator quadratures: r_Re and r_Im
/// from the incoherent (mean-subtracted) covariances, checked against each
/// other and averaged. They agree whenever the incoherent anomalous sector
/// is empty, which the rotating-wave generator preserves.
pub fn correlation(state: &MomentState) -> Result<f64, MomentError> {
    let anom = state.incoherent_anomalous();
    let n1 = state.incoherent_occ(0);
    let n2 = state.incoherent_occ(1);
    let cross = state.incoherent_cross();
    let var_x1 = n1 + anom[0].re + 0.5;
    let var_x2 = n2 + anom[1].re + 0.5;
    let var_p1 = n1 - anom[0].re + 0.5;
    let var_p2 = n2 - anom[1].re + 0.5;
    if var_x1 <= 0.0 || var_x2 <= 0.0 || var_p1 <= 0.0 || var_p2 <= 0.0 {
        return Err(MomentError::DegenerateVariance);
    }
    let r_re = (cross.re + anom[2].re) / (var_x1 * var_x2).sqrt();
    let r_im = (cross.re - anom[2].re) / (var_p1 * var_p2).sqrt();
    Ok(0.5 * (r_re + r_im))
}

// ---------------------------------------------------------------------------
// Drift matrices and physicality checks
// ---------------------------------------------------------------------------

/// First-moment drift matrix A(t) with the coupling phases evaluated at
/// absolute time `t`: d⟨b⟩/dt = A ⟨b⟩.
pub fn first_moment_drift(
    osc: &[OscillatorParams; 2],
    drive: &CavityDrive,
    t: f64,
) -> [[C64; 2]; 2] {
    let gen = Generator::from_drive(osc, drive);
    let delta_bare = osc[1].omega - osc[0].omega;
    let p = C64::from_polar(1.0, delta_bare * t);
    let i = C64::I;
    [
        [
            -i * gen.ham_shift[0] - 0.5 * gen.gamma_tot[0],
            -i * gen.j * p.conj() - 0.5 * gen.gamma_cross,
        ],
        [
            -i * gen.j * p - 0.5 * gen.gamma_cross,
            -i * gen.ham_shift[1] - 0.5 * gen.gamma_tot[1],
        ],
    ]
}

/// Largest real part of the drift eigenvalues in the frame where the
/// coupling is static (mode 2 shifted by ω₂−ω₁). Positive means dynamical
/// instability (onset of regenerative oscillation).
pub fn drift_max_real(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> f64 {
    let gen = Generator::from_drive(osc, drive);
    let delta_bare = osc[1].omega - osc[0].omega;
    let i = C64::I;
    let a = -i * gen.ham_shift[0] - 0.5 * gen.gamma_tot[0];
    let d = -i * (gen.ham_shift[1] + delta_bare) - 0.5 * gen.gamma_tot[1];
    let off = -i * gen.j - 0.5 * gen.gamma_cross;
    let tr = a + d;
    let disc = (tr * tr * 0.25 - (a * d - off * off)).sqrt();
    (tr * 0.5 + disc).re.max((tr * 0.5 - disc).re)
}

/// Symmetrized quadrature covariance matrix of the incoherent fluctuations,
/// ordered (x₁, p₁, x₂, p₂). Vacuum is 0.5·I.
pub fn quadrature_covariance(state: &MomentState) -> [[f64; 4]; 4] {
    let cross = state.incoherent_cross();
    let n = [
        [C64::new(state.incoherent_occ(0), 0.0), cross],
        [cross.conj(), C64::new(state.incoherent_occ(1), 0.0)],
    ];
    let anom = state.incoherent_anomalous();
    let a = [[anom[0], anom[2]], [anom[2], anom[1]]];
    let mut cov = [[0.0f64; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            let xx = a[i][j].re + n[i][j].re + if i == j { 0.5 } else { 0.0 };
            let pp = -a[i][j].re + n[i][j].re + if i == j { 0.5 } else { 0.0 };
            let xp = a[i][j].im + n[i][j].im;
            let px = a[i][j].im - n[i][j].im;
            cov[2 * i][2 * j] = xx;
            cov[2 * i + 1][2 * j + 1] = pp;
            cov[2 * i][2 * j + 1] = xp;
            cov[2 * i + 1][2 * j] = px;
        }
    }
    for i in 0..4 {
        for j in 0..i {
            let m = 0.5 * (cov[i][j] + cov[j][i]);
            cov[i][j] = m;
            cov[j][i] = m;
        }
    }
    cov
}

/// Smallest symplectic eigenvalue of a two-mode covariance matrix in
/// (x₁, p₁, x₂, p₂) ordering. Physical Gaussian states satisfy ν ≥ 1/2.
pub fn min_symplectic_eigenvalue(cov: &[[f64; 4]; 4]) -> f64 {
    let a = [[cov[0][0], cov[0][1]], [cov[1][0], cov[1][1]]];
    let b = [[cov[2][2], cov[2][3]], [cov[3][2], cov[3][3]]];
    let c = [[cov[0][2], cov[0][3]], [cov[1][2], cov[1][3]]];
    let det2 = |m: &[[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let det4 = det4(cov);
    let delta = det2(&a) + det2(&b) + 2.0 * det2(&c);
    let disc = (delta * delta - 4.0 * det4).max(0.0);
    let nu2 = 0.5 * (delta - disc.sqrt());
    nu2.max(0.0).sqrt()
}

fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return 0.0;
        }
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    det
}

/// Draw the complex envelopes (η₁, η₂) of one experimental shot from the
/// Gaussian state. Sampling the symmetrized (Wigner) distribution
/// reproduces the statistics of any linear measurement, including the
/// matched filter; the mean amplitudes carry their accumulated frame
/// phases, the fluctuations are drawn from the incoherent covariance.
pub fn sample_envelope(
    state: &MomentState,
    osc: &[OscillatorParams; 2],
    rng: &mut impl rand::Rng,
) -> [C64; 2] {
    use rand_distr::StandardNormal;
    let cov = quadrature_covariance(state);
    // the covariance is in (b+b†)/√2 units, so (Re η, Im η) = (x, p)/√2
    let mut cov_eta = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            cov_eta[i][j] = cov[i][j] / 2.0;
        }
    }
    let l = crate::spectral::cholesky4(&cov_eta).expect("physical covariance");
    let z: [f64; 4] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    let mut fluct = [0.0f64; 4];
    for i in 0..4 {
        for j in 0..=i {
            fluct[i] += l[i][j] * z[j];
        }
    }
    let mean_eta = [
        state.mean[0] * C64::from_polar(1.0, -osc[0].omega * state.t),
        state.mean[1] * C64::from_polar(1.0, -osc[1].omega * state.t),
    ];
    [
        mean_eta[0] + C64::new(fluct[0], fluct[1]),
        mean_eta[1] + C64::new(fluct[2], fluct[3]),
    ]
}
