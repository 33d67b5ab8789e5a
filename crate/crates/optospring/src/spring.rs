//! Optical spring constants, coupling strength and the classical
//! normal-mode structure of the coupled two-oscillator system.
//!
//! The intracavity intensity responds to the cavity-frequency pull of each
//! oscillator, so a displacement of one changes the radiation force on the
//! other. For a pump detuned by Δ_pc from the cavity the induced spring
//! constants are
//!
//! ```text
//! k_ij = ħ g_i g_j / (Z_i Z_j) · 2 n̄ Δ_pc / (κ² + Δ_pc²)
//! ```
//!
//! positive (stiffening) for a blue-detuned pump. The cavity-coupled
//! superposition of the two oscillators is the "bright" mode; stiffening
//! pushes it up in frequency, so for Δ_pc > 0 the upper normal mode is the
//! bright, strongly measured and strongly backaction-driven one.

use serde::Serialize;
use thiserror::Error;

use crate::model::{CavityDrive, OscillatorParams, HBAR};
use crate::moments;

/// Optical spring constants and summary coupling scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpringMatrix {
    /// Spring constants k\[i\]\[j\] in N/m, symmetric, signed.
    pub k: [[f64; 2]; 2],
    /// Summary coupling strength Ω = (|k₁₂| / M̄) / ω̄ (rad/s), built with
    /// the mean mass M̄.
    pub omega_coupling: f64,
    /// Natural splitting δ = ω₂ − ω₁ (rad/s).
    pub delta: f64,
    /// Mean frequency ω̄ = (ω₁ + ω₂)/2 (rad/s).
    pub omega_bar: f64,
}

/// Normal-mode frequencies and composition of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalModes {
    /// Upper normal-mode frequency (rad/s).
    pub omega_plus: f64,
    /// Lower normal-mode frequency (rad/s).
    pub omega_minus: f64,
    /// Mode composition in mass-weighted coordinates; row 0 is the upper
    /// mode, columns are the bare oscillators. Rows are unit normalized and
    /// orthonormal for the equal-mass problem.
    pub weights: [[f64; 2]; 2],
    /// Coupling regime classification.
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Weak,
    Strong,
}

#[derive(Debug, Error)]
pub enum SpringError {
    #[error("normal mode unstable: squared eigenfrequency {0:.3e} <= 0 (anti-trapping spring exceeds restoring force)")]
    Unstable(f64),
    #[error("no stability boundary inside the requested range; system stable throughout")]
    NoBoundaryInRange,
}

/// Evaluate the optical spring matrix at a drive point.
pub fn spring_constants(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> SpringMatrix {
    let lorentz = 2.0 * drive.nbar * drive.delta_pc
        / (drive.kappa * drive.kappa + drive.delta_pc * drive.delta_pc);
    let z = [osc[0].zero_point_length(), osc[1].zero_point_length()];
    let mut k = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            k[i][j] = HBAR * osc[i].g * osc[j].g / (z[i] * z[j]) * lorentz;
        }
    }
    let mean_mass = 0.5 * (osc[0].mass + osc[1].mass);
    let omega_bar = 0.5 * (osc[0].omega + osc[1].omega);
    SpringMatrix {
        k,
        omega_coupling: (k[0][1].abs() / mean_mass) / omega_bar,
        delta: osc[1].omega - osc[0].omega,
        omega_bar,
    }
}

/// Closed-form normal-mode frequencies of the simplified equal-mass,
/// uniform-spring system:
/// ω±² = δ²/4 + k/M + ω̄² ± sqrt((k/M)² + δ² ω̄²).
pub fn simplified_eigenfrequencies(
    k_over_m: f64,
    omega_bar: f64,
    delta: f64,
) -> Result<(f64, f64), SpringError> {
    if k_over_m == 0.0 {
        // uncoupled limit, exactly
        return Ok((omega_bar + delta / 2.0, omega_bar - delta / 2.0));
    }
    let base = delta * delta / 4.0 + k_over_m + omega_bar * omega_bar;
    let split = (k_over_m * k_over_m + delta * delta * omega_bar * omega_bar).sqrt();
    let w_plus2 = base + split;
    let w_minus2 = base - split;
    if w_minus2 <= 0.0 || w_plus2 <= 0.0 {
        return Err(SpringError::Unstable(w_minus2.min(w_plus2)));
    }
    Ok((w_plus2.sqrt(), w_minus2.sqrt()))
}

/// The mass-weighted dynamical matrix of the coupled system, with quadratic
/// trap shifts applied to the bare frequencies whenever photons are present.
pub fn dynamical_matrix(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> [[f64; 2]; 2] {
    let spring = spring_constants(osc, drive);
    let w_eff = [
        osc[0].effective_omega(drive.nbar),
        osc[1].effective_omega(drive.nbar),
    ];
    let m = [osc[0].mass, osc[1].mass];
    [
        [
            w_eff[0] * w_eff[0] + spring.k[0][0] / m[0],
            spring.k[0][1] / (m[0] * m[1]).sqrt(),
        ],
        [
            spring.k[1][0] / (m[0] * m[1]).sqrt(),
            w_eff[1] * w_eff[1] + spring.k[1][1] / m[1],
        ],
    ]
}

/// Normal modes of the exact (unequal-mass) eigenproblem at a drive point.
pub fn normal_modes(
    osc: &[OscillatorParams; 2],
    drive: &CavityDrive,
) -> Result<NormalModes, SpringError> {
    let a = dynamical_matrix(osc, drive);
    let (lam_plus, lam_minus, v_plus, v_minus) = eig_sym2(&a);
    if lam_minus <= 0.0 {
        return Err(SpringError::Unstable(lam_minus));
    }
    // coupling-induced splitting increase vs the natural splitting
    let w_eff = [
        osc[0].effective_omega(drive.nbar),
        osc[1].effective_omega(drive.nbar),
    ];
    let split_uncoupled = (w_eff[1] - w_eff[0]).abs();
    let split = lam_plus.sqrt() - lam_minus.sqrt();
    let increase = split - split_uncoupled;
    let natural = (osc[1].omega - osc[0].omega).abs();
    let regime = if increase > natural {
        Regime::Strong
    } else {
        Regime::Weak
    };
    Ok(NormalModes {
        omega_plus: lam_plus.sqrt(),
        omega_minus: lam_minus.sqrt(),
        weights: [v_plus, v_minus],
        regime,
    })
}

/// Eigen decomposition of a symmetric 2×2 matrix: (λ₊, λ₋, v₊, v₋) with
/// unit-normalized eigenvectors.
fn eig_sym2(a: &[[f64; 2]; 2]) -> (f64, f64, [f64; 2], [f64; 2]) {
    let tr = a[0][0] + a[1][1];
    let diff = a[0][0] - a[1][1];
    let disc = (diff * diff / 4.0 + a[0][1] * a[1][0]).sqrt();
    let lam_plus = tr / 2.0 + disc;
    let lam_minus = tr / 2.0 - disc;
    let vec_for = |lam: f64| -> [f64; 2] {
        // (A - λ) v = 0; pick the better-conditioned row
        let r0 = [a[0][0] - lam, a[0][1]];
        let r1 = [a[1][0], a[1][1] - lam];
        let (vx, vy) = if r0[0].abs().max(r0[1].abs()) > r1[0].abs().max(r1[1].abs()) {
            (-r0[1], r0[0])
        } else {
            (-r1[1], r1[0])
        };
        let n = (vx * vx + vy * vy).sqrt();
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            // orient so the dominant component is positive
            let s = if vx.abs() >= vy.abs() {
                vx.signum()
            } else {
                vy.signum()
            };
            [s * vx / n, s * vy / n]
        }
    };
    if a[0][1] == 0.0 && a[1][0] == 0.0 {
        // already diagonal
        return if a[0][0] >= a[1][1] {
            (a[0][0], a[1][1], [1.0, 0.0], [0.0, 1.0])
        } else {
            (a[1][1], a[0][0], [0.0, 1.0], [1.0, 0.0])
        };
    }
    (lam_plus, lam_minus, vec_for(lam_plus), vec_for(lam_minus))
}

/// Axis along which [`stability_boundary`] sweeps the drive.
#[derive(Debug, Clone, Copy)]
pub enum DriveSweep {
    /// Sweep the photon number over `[lo, hi]` at fixed detuning.
    Nbar { delta_pc: f64, lo: f64, hi: f64 },
    /// Sweep the detuning over `[lo, hi]` at fixed photon number.
    DeltaPc { nbar: f64, lo: f64, hi: f64 },
}

/// Locate the drive-parameter threshold where the first-moment drift matrix
/// of the moment dynamics first acquires an eigenvalue with positive real
/// part. Returns the boundary value of the swept parameter.
pub fn stability_boundary(
    osc: &[OscillatorParams; 2],
    cavity: &CavityDrive,
    sweep: DriveSweep,
) -> Result<f64, SpringError> {
    let drive_for = |x: f64| match sweep {
        DriveSweep::Nbar { delta_pc, .. } => cavity.at(x, delta_pc),
        DriveSweep::DeltaPc { nbar, .. } => cavity.at(nbar, x),
    };
    let (lo, hi) = match sweep {
        DriveSweep::Nbar { lo, hi, .. } => (lo, hi),
        DriveSweep::DeltaPc { lo, hi, .. } => (lo, hi),
    };
    let f = |x: f64| moments::drift_max_real(osc, &drive_for(x));
    if f(lo) >= 0.0 {
        // unstable from the very start counts as a boundary at the start
        return Ok(lo);
    }
    if f(hi) < 0.0 {
        return Err(SpringError::NoBoundaryInRange);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if (b - a).abs() <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
