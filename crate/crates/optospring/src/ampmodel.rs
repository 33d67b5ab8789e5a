//! Steady-state frequency-domain model of the driven cavity with two
//! mechanical oscillators: heterodyne sideband spectra in shot-noise units,
//! internal mechanical variances, and the inverse problems (cooperativity
//! from a peak height, occupation from sideband asymmetry).
//!
//! The model solves the linearized input–output response exactly at every
//! analysis frequency: cavity susceptibility 1/(κ − i(ω ± Δ)), mechanical
//! susceptibilities χ_j(ω) = 2ω_j/(ω_j² − ω² − iΓ_j ω) and coupling rate
//! √n̄ g_j. Optical vacuum enters through both cavity quadratures with
//! symmetrized spectra, thermal baths as white forces of strength
//! Γ_j(2ν_th,j + 1)/2, so every symmetrized output moment is exact,
//! including backaction heating and the noise interference terms.
//!
//! Shot-noise convention: the displayed PSD is normalized so the floor away
//! from the mechanical resonances is exactly 1, and the total (two-sided)
//! shot-noise power spectral density is S_SN = 2 in these units.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::{CavityDrive, OscillatorParams};
use crate::moments;
use crate::spectral::PeakFit;
use crate::spring;

/// Total two-sided shot-noise PSD in floor-normalized units.
pub const S_SN: f64 = 2.0;

/// A sampled symmetrized heterodyne spectrum in shot-noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    /// Analysis angular frequencies (rad/s), ascending.
    pub freqs: Vec<f64>,
    /// Symmetrized PSD in shot-noise units (floor = 1).
    pub psd: Vec<f64>,
    /// Resolution bandwidth the grid was built for (rad/s).
    pub resolution_bw: f64,
}

/// Integrated sideband powers of one oscillator (arbitrary common units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidebandPair {
    /// Blue sideband power, proportional to ν.
    pub p_plus: f64,
    /// Red sideband power, proportional to ν + 1.
    pub p_minus: f64,
}

/// Sideband pair of a thermal oscillator with occupation `nu`, in units of
/// `weight` per phonon. The red–blue difference is exactly one zero-point
/// unit.
pub fn sideband_pair_from_occupation(nu: f64, weight: f64) -> SidebandPair {
    SidebandPair {
        p_plus: weight * nu,
        p_minus: weight * (nu + 1.0),
    }
}

#[derive(Debug, Error)]
pub enum AmpError {
    #[error("configuration is dynamically unstable; steady spectrum undefined")]
    Unstable,
    #[error("peak height {0} below the shot-noise floor")]
    BelowFloor(f64),
    #[error("sideband asymmetry absent (p_minus <= p_plus); thermometry undefined")]
    DegenerateSidebands,
}

/// Default resolution bandwidth of emitted spectra (rad/s), matching a
/// 5 ms measurement record.
pub fn default_resolution_bw() -> f64 {
    crate::model::hz(100.0)
}

/// Default analysis grid covering both mechanical peaks with generous floor
/// on either side.
pub fn default_grid(osc: &[OscillatorParams; 2]) -> Vec<f64> {
    let center = 0.5 * (osc[0].omega + osc[1].omega);
    let half_span = crate::model::hz(18e3);
    let step = crate::model::hz(20.0);
    let n = (2.0 * half_span / step) as usize + 1;
    (0..n).map(|i| center - half_span + i as f64 * step).collect()
}

/// Per-frequency transfer rows of the closed-loop system, one column per
/// noise port (X_in, Y_in, f₁, f₂).
struct TransferAt {
    /// mechanical responses x_j per port
    x: [[C64; 4]; 2],
    /// detected phase-quadrature output row
    out_y: [C64; 4],
}

fn transfer_at(osc: &[OscillatorParams; 2], drive: &CavityDrive, w: f64) -> TransferAt {
    let kappa = drive.kappa;
    let delta = drive.delta_pc;
    let nbar = drive.nbar;
    let d = C64::new(kappa, -w);
    let p = d * d + delta * delta;
    let root_2k = (2.0 * kappa).sqrt();
    let root_2n = (2.0 * nbar).sqrt();

    let chi = [0, 1].map(|j| {
        let weff = osc[j].effective_omega(nbar);
        2.0 * weff / C64::new(weff * weff - w * w, -osc[j].gamma * w)
    });
    let g = [osc[0].g, osc[1].g];

    // (I + Ξ) x = R, Ξ_jl = 2 n̄ Δ g_j g_l χ_j / P
    let xi = |j: usize, l: usize| 2.0 * nbar * delta * g[j] * g[l] * chi[j] / p;
    let a11 = C64::new(1.0, 0.0) + xi(0, 0);
    let a12 = xi(0, 1);
    let a21 = xi(1, 0);
    let a22 = C64::new(1.0, 0.0) + xi(1, 1);
    let det = a11 * a22 - a12 * a21;

    // right-hand sides per port
    let mut rhs = [[C64::ZERO; 4]; 2];
    for j in 0..2 {
        let drive_opt = -chi[j] * root_2n * g[j] * root_2k / p;
        rhs[j][0] = drive_opt * d; // X_in
        rhs[j][1] = -drive_opt * delta; // Y_in
        rhs[j][2 + j] = chi[j]; // own thermal force
    }

    let mut x = [[C64::ZERO; 4]; 2];
    for port in 0..4 {
        let b1 = rhs[0][port];
        let b2 = rhs[1][port];
        x[0][port] = (b1 * a22 - a12 * b2) / det;
        x[1][port] = (a11 * b2 - a21 * b1) / det;
    }

    let mut out_y = [C64::ZERO; 4];
    for port in 0..4 {
        let u_x = if port == 0 {
            C64::new(root_2k, 0.0)
        } else {
            C64::ZERO
        };
        let mech: C64 = root_2n * (g[0] * x[0][port] + g[1] * x[1][port]);
        let u_y = if port == 1 {
            C64::new(root_2k, 0.0)
        } else {
            C64::ZERO
        } - mech;
        let y_c = (delta * u_x + d * u_y) / p;
        out_y[port] = root_2k * y_c
            - if port == 1 {
                C64::new(1.0, 0.0)
            } else {
                C64::ZERO
            };
    }
    TransferAt { x, out_y }
}

fn port_weights(osc: &[OscillatorParams; 2]) -> [f64; 4] {
    [
        0.5,
        0.5,
        osc[0].gamma * (2.0 * osc[0].nu_th + 1.0) / 2.0,
        osc[1].gamma * (2.0 * osc[1].nu_th + 1.0) / 2.0,
    ]
}

fn check_stable(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> Result<(), AmpError> {
    if moments::drift_max_real(osc, drive) >= 0.0 {
        return Err(AmpError::Unstable);
    }
    if spring::normal_modes(osc, drive).is_err() {
        return Err(AmpError::Unstable);
    }
    Ok(())
}

/// Symmetrized PSD of the detected phase quadrature of the transmitted
/// light over `freqs`, in shot-noise units. The phase-quadrature vacuum
/// floor is exactly 1/2 at every detuning, so the normalized floor is
/// exactly 1 and the total two-sided shot PSD is [`S_SN`] = 2 in these
/// units.
pub fn steady_spectrum(
    osc: &[OscillatorParams; 2],
    drive: &CavityDrive,
    freqs: &[f64],
    resolution_bw: f64,
) -> Result<SpectrumGrid, AmpError> {
    check_stable(osc, drive)?;
    let s = port_weights(osc);
    let psd = freqs
        .iter()
        .map(|&w| {
            let t = transfer_at(osc, drive, w);
            let mut phase_psd = 0.0;
            for port in 0..4 {
                phase_psd += t.out_y[port].norm_sqr() * s[port];
            }
            1.0 + drive.epsilon * (2.0 * phase_psd - 1.0)
        })
        .collect();
    Ok(SpectrumGrid {
        freqs: freqs.to_vec(),
        psd,
        resolution_bw,
    })
}

/// Symmetrized mechanical displacement PSDs S_x,j(ω) in zero-point units².
pub fn mechanical_psd(osc: &[OscillatorParams; 2], drive: &CavityDrive, w: f64) -> [f64; 2] {
    let t = transfer_at(osc, drive, w);
    let s = port_weights(osc);
    let mut out = [0.0; 2];
    for j in 0..2 {
        for port in 0..4 {
            out[j] += t.x[j][port].norm_sqr() * s[port];
        }
    }
    out
}

/// Steady-state occupations from the frequency-domain model,
/// ν_j = (⟨x_j²⟩ + ⟨p_j²⟩)/4 − 1/2 with the variances integrated over the
/// full spectrum. The symmetrized moments of a Gaussian linear system evolve
/// classically, so this is exact for the linearized dynamics.
pub fn mechanical_occupations(
    osc: &[OscillatorParams; 2],
    drive: &CavityDrive,
) -> Result<[f64; 2], AmpError> {
    check_stable(osc, drive)?;
    let grid = variance_grid(osc, drive);
    let weff = [
        osc[0].effective_omega(drive.nbar),
        osc[1].effective_omega(drive.nbar),
    ];
    let mut var = [0.0f64; 2]; // accumulates ∫(S_x + S_p) dω over ω > 0
    let mut prev_w = grid[0];
    let mut prev = integrand(osc, drive, prev_w, &weff);
    for &w in &grid[1..] {
        let cur = integrand(osc, drive, w, &weff);
        let h = w - prev_w;
        for j in 0..2 {
            var[j] += 0.5 * (prev[j] + cur[j]) * h;
        }
        prev = cur;
        prev_w = w;
    }
    // even spectrum: double the positive-frequency integral, normalize 1/2π
    Ok([0, 1].map(|j| (2.0 * var[j] / std::f64::consts::TAU) / 4.0 - 0.5))
}

fn integrand(
    osc: &[OscillatorParams; 2],
    drive: &CavityDrive,
    w: f64,
    weff: &[f64; 2],
) -> [f64; 2] {
    let sx = mechanical_psd(osc, drive, w);
    [0, 1].map(|j| sx[j] * (1.0 + (w / weff[j]) * (w / weff[j])))
}

/// Composite integration grid: dense across each mechanical resonance and
/// coarse over the smooth background out to 2.5 ω₂.
fn variance_grid(osc: &[OscillatorParams; 2], drive: &CavityDrive) -> Vec<f64> {
    let mut pts = Vec::new();
    let w_hi = 2.5 * osc[1].omega;
    let n_coarse = 1500;
    for i in 0..=n_coarse {
        pts.push(1.0 + w_hi * i as f64 / n_coarse as f64);
    }
    for j in 0..2 {
        let w0 = osc[j].effective_omega(drive.nbar);
        let gamma = osc[j].gamma;
        let span = 30.0 * gamma;
        let n_fine = 2400;
        for i in 0..=n_fine {
            let w = w0 - span + 2.0 * span * i as f64 / n_fine as f64;
            if w > 0.0 {
                pts.push(w);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    pts
}

/// Fit the two mechanical peaks of a spectrum with the physical line shape
/// a/((ω²−ω₀²)² + γ²ω²), by iterative subtraction. Returns the fits ordered
/// by center frequency.
pub fn fit_spectrum_peaks(grid: &SpectrumGrid) -> Option<[PeakFit; 2]> {
    let freqs = &grid.freqs;
    let n = freqs.len();
    let mut fits: Vec<PeakFit> = Vec::new();
    let mut residual: Vec<f64> = grid.psd.clone();
    for _ in 0..2 {
        let imax = residual
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?
            .0;
        let lo = imax.saturating_sub(n / 6);
        let hi = (imax + n / 6).min(n);
        let fit = crate::spectral::fit_mechanical_line(freqs, &residual, lo, hi, 1.0)?;
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= crate::spectral::mechanical_line_value(&fit, freqs[i]);
        }
        fits.push(fit);
    }
    // refinement: re-fit each peak on the spectrum minus the other
    for _ in 0..3 {
        for k in 0..2 {
            let other = fits[1 - k];
            let cleaned: Vec<f64> = grid
                .psd
                .iter()
                .enumerate()
                .map(|(i, &p)| p - crate::spectral::mechanical_line_value(&other, freqs[i]))
                .collect();
            let icenter = freqs
                .iter()
                .position(|&w| w >= fits[k].center)
                .unwrap_or(n / 2);
            let lo = icenter.saturating_sub(n / 6);
            let hi = (icenter + n / 6).min(n);
            if let Some(fit) = crate::spectral::fit_mechanical_line(freqs, &cleaned, lo, hi, 1.0) {
                fits[k] = fit;
            }
        }
    }
    fits.sort_by(|a, b| a.center.total_cmp(&b.center));
    Some([fits[0], fits[1]])
}

/// Floor-subtracted areas of the two mechanical peaks, as ∫(S−1) dω/2π per
/// peak. The spectrum is integrated directly on its grid, split at the
/// midpoint between the fitted centers; the other peak's fitted line is
/// subtracted under each integral, and the slow wings beyond the
/// integration range are restored from the fits.
pub fn peak_areas(grid: &SpectrumGrid) -> Option<[f64; 2]> {
    let fits = fit_spectrum_peaks(grid)?;
    let freqs = &grid.freqs;
    let line = crate::spectral::mechanical_line_value;
    // numerical integral of a fitted line over [a, b]
    let line_int = |fit: &PeakFit, a: f64, b: f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (line(fit, a) + line(fit, b));
        for i in 1..n {
            acc += line(fit, a + i as f64 * h);
        }
        acc * h
    };
    let mid = 0.5 * (fits[0].center + fits[1].center);
    let mut areas = [0.0f64; 2];
    for i in 1..freqs.len() {
        let (w0, w1) = (freqs[i - 1], freqs[i]);
        let wm = 0.5 * (w0 + w1);
        let peak = usize::from(wm >= mid);
        let other = &fits[1 - peak];
        let y0 = grid.psd[i - 1] - 1.0 - line(other, w0);
        let y1 = grid.psd[i] - 1.0 - line(other, w1);
        areas[peak] += 0.5 * (y0 + y1) * (w1 - w0);
    }
    // restore the wings outside the integrated ranges
    let (lo, hi) = (freqs[0], freqs[freqs.len() - 1]);
    areas[0] += (fits[0].area - line_int(&fits[0], lo, mid)).max(0.0);
    areas[1] += (fits[1].area - line_int(&fits[1], mid, hi)).max(0.0);
    Some([
        areas[0] / std::f64::consts::TAU,
        areas[1] / std::f64::consts::TAU,
    ])
}

/// Cooperativity from a fitted peak height: the inverse of the peak-height
/// model, C = −(ν_th + 1/2) + sqrt((ν_th + 1/2)² + (2 P/S_SN − 1)/(4ε)).
/// `peak_height` and `s_sn` must share units; with the floor-normalized
/// spectra emitted here, pass the peak PSD and [`S_SN`].
pub fn peak_to_cooperativity(
    peak_height: f64,
    s_sn: f64,
    osc: &OscillatorParams,
    drive: &CavityDrive,
) -> Result<f64, AmpError> {
    let excess = 2.0 * peak_height / s_sn - 1.0;
    if excess < 0.0 {
        return Err(AmpError::BelowFloor(peak_height));
    }
    let half = osc.nu_th + 0.5;
    Ok(-half + (half * half + excess / (4.0 * drive.epsilon)).sqrt())
}

/// Occupation from sideband asymmetry, ν = P₊ / (P₋ − P₊).
pub fn occupation_from_sidebands(sb: &SidebandPair) -> Result<f64, AmpError> {
    // the negated form also rejects NaN inputs
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(sb.p_minus > sb.p_plus) {
        return Err(AmpError::DegenerateSidebands);
    }
    Ok(sb.p_plus / (sb.p_minus - sb.p_plus))
}

/// Draw a random stable configuration from the family of identically
/// prepared ensembles (one g, Γ, ν_th per config; the wells differ by the
/// trap splitting and their quadratic shifts), at a modest drive point
/// where the static-rate reduction of the moment equations stays within a
/// couple of percent of the exact frequency-domain response. Returns `None`
/// when the draw lands outside the stability margin.
pub fn random_stable_config(
    template: &crate::model::SystemConfig,
    rng: &mut impl rand::Rng,
) -> Option<([OscillatorParams; 2], CavityDrive)> {
    let mut osc = template.osc;
    let f1 = 90e3 + rng.random::<f64>() * 20e3;
    let split = 4e3 + rng.random::<f64>() * 5e3;
    osc[0].omega = crate::model::hz(f1);
    osc[1].omega = crate::model::hz(f1 + split);
    let gamma = crate::model::hz(0.8e3 + rng.random::<f64>() * 1.7e3);
    let g = crate::model::hz(15e3 + rng.random::<f64>() * 15e3);
    let nu_th = 0.5 + rng.random::<f64>() * 2.5;
    for o in osc.iter_mut() {
        o.gamma = gamma;
        o.g = g;
        o.nu_th = nu_th;
    }
    osc[0].omega_q = crate::model::hz(-20.0 - rng.random::<f64>() * 80.0);
    osc[1].omega_q = crate::model::hz(50.0 + rng.random::<f64>() * 200.0);
    let nbar = 0.4 + rng.random::<f64>() * 0.8;
    let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
    let delta = sign * crate::model::hz(0.03e6 + rng.random::<f64>() * 0.22e6);
    let drive = template.drive.at(nbar, delta);
    if moments::drift_max_real(&osc, &drive) >= -crate::model::hz(50.0) {
        return None;
    }
    Some((osc, drive))
}

/// Occupation implied by a shot-subtracted peak area of the detected
/// spectrum at zero detuning: area = 2 ε Γ C (ν + 1/2) · κ²/(κ² + ω²), with
/// `area` taken as ∫(S−1) dω/2π over one peak. The last factor is the
/// cavity response at the mechanical sideband.
pub fn occupation_from_peak_area(area: f64, osc: &OscillatorParams, drive: &CavityDrive) -> f64 {
    let c = crate::model::cooperativity(osc, drive);
    let k2 = drive.kappa * drive.kappa;
    let w = osc.effective_omega(drive.nbar);
    let cavity = k2 / (k2 + w * w);
    area / (2.0 * drive.epsilon * osc.gamma * c * cavity) - 0.5
}
