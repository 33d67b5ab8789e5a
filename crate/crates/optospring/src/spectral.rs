//! Shared numerical helpers: Welch spectral estimation, Lorentzian peak
//! fitting, a zero-phase band-pass for display traces and small dense linear
//! solvers used by the filter and amplifier modules.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::f64::consts::{PI, TAU};

/// Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Truncated 3-term Blackman window of length `n` over its full support.
pub fn blackman(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let u = i as f64 / (n as f64 - 1.0);
            0.42 - 0.5 * (TAU * u).cos() + 0.08 * (2.0 * TAU * u).cos()
        })
        .collect()
}

/// One-sided Welch power spectral density with Hann windows and 50% overlap.
///
/// `rbw` is the requested resolution bandwidth in rad/s; the segment length
/// is chosen as `round(fs / rbw_hz)`. Returns (frequencies in Hz, PSD in
/// signal-units²/Hz).
pub fn welch_psd(x: &[f64], fs: f64, rbw: f64) -> (Vec<f64>, Vec<f64>) {
    let rbw_hz = rbw / TAU;
    let nseg = ((fs / rbw_hz).round() as usize).clamp(8, x.len().max(8));
    let nseg = nseg.min(x.len());
    let window = hann(nseg);
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let hop = (nseg / 2).max(1);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nseg);

    let nbins = nseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut count = 0usize;
    let mut start = 0usize;
    let mut buf = vec![C64::new(0.0, 0.0); nseg];
    while start + nseg <= x.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = C64::new(x[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mut p = buf[k].norm_sqr();
            // fold the negative-frequency bin into the one-sided estimate
            if k != 0 && !(nseg.is_multiple_of(2) && k == nseg / 2) {
                p *= 2.0;
            }
            *a += p;
        }
        count += 1;
        start += hop;
    }
    if count == 0 {
        return (Vec::new(), Vec::new());
    }
    let norm = 1.0 / (count as f64 * fs * w2);
    let psd: Vec<f64> = acc.iter().map(|a| a * norm).collect();
    let freqs: Vec<f64> = (0..nbins).map(|k| k as f64 * fs / nseg as f64).collect();
    (freqs, psd)
}

/// Amplitude spectrum |FFT| of a real signal, zero-padded by `pad` for
/// frequency interpolation. Returns (frequencies in Hz, amplitudes).
pub fn amplitude_spectrum(x: &[f64], fs: f64, pad: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (x.len() * pad.max(1)).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (i, &v) in x.iter().enumerate() {
        buf[i] = C64::new(v, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let nbins = n / 2 + 1;
    let amps: Vec<f64> = buf[..nbins].iter().map(|c| c.norm()).collect();
    let freqs: Vec<f64> = (0..nbins).map(|k| k as f64 * fs / n as f64).collect();
    (freqs, amps)
}

/// Amplitude of the single-frequency component of `x` at angular frequency
/// `w`, via direct demodulation over the whole record.
pub fn tone_amplitude(x: &[f64], dt: f64, w: f64) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let t = i as f64 * dt;
        acc += v * C64::new(0.0, -w * t).exp();
    }
    2.0 * acc.norm() / x.len() as f64
}

/// Full width at half maximum of the tallest feature of a spectrum, by
/// linear interpolation of the half-power crossings.
pub fn fwhm(freqs: &[f64], power: &[f64]) -> Option<f64> {
    let (imax, &pmax) = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = pmax / 2.0;
    let mut lo = freqs[imax];
    for i in (1..=imax).rev() {
        if power[i - 1] <= half {
            let u = (half - power[i - 1]) / (power[i] - power[i - 1]);
            lo = freqs[i - 1] + u * (freqs[i] - freqs[i - 1]);
            break;
        }
    }
    let mut hi = freqs[imax];
    for i in imax..power.len() - 1 {
        if power[i + 1] <= half {
            let u = (power[i] - half) / (power[i] - power[i + 1]);
            hi = freqs[i] + u * (freqs[i + 1] - freqs[i]);
            break;
        }
    }
    (hi > lo).then_some(hi - lo)
}

/// A fitted Lorentzian peak on a flat floor.
#[derive(Debug, Clone, Copy)]
pub struct PeakFit {
    /// Peak center (same units as the frequency axis).
    pub center: f64,
    /// Full width at half maximum.
    pub fwhm: f64,
    /// Peak height above the floor.
    pub height: f64,
    /// Integrated area above the floor, π height fwhm / 2.
    pub area: f64,
}

/// Fit `y(f) = floor + h (w/2)² / ((f-f0)² + (w/2)²)` on the index window
/// `[lo, hi)` by Gauss-Newton with the floor held fixed.
pub fn fit_lorentzian(freqs: &[f64], y: &[f64], lo: usize, hi: usize, floor: f64) -> Option<PeakFit> {
    let f = &freqs[lo..hi];
    let v = &y[lo..hi];
    if f.len() < 5 {
        return None;
    }
    let (imax, &vmax) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut f0 = f[imax];
    let mut h = (vmax - floor).max(1e-12);
    // crude width from half crossings
    let mut w = fwhm(f, &v.iter().map(|x| x - floor).collect::<Vec<_>>())
        .unwrap_or((f[f.len() - 1] - f[0]) / 4.0);
    for _ in 0..60 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (fi, vi) in f.iter().zip(v.iter()) {
            let d = fi - f0;
            let hw2 = (w / 2.0) * (w / 2.0);
            let den = d * d + hw2;
            let l = hw2 / den;
            let model = floor + h * l;
            let r = vi - model;
            // partials wrt (h, f0, w)
            let dh = l;
            let df0 = h * hw2 * 2.0 * d / (den * den);
            let dw = h * (w / 2.0) * (d * d) / (den * den);
            let grad = [dh, df0, dw];
            for a in 0..3 {
                jtr[a] += grad[a] * r;
                for b in 0..3 {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        for (a, row) in jtj.iter_mut().enumerate() {
            row[a] *= 1.0 + 1e-9;
        }
        let Some(step) = solve3(jtj, jtr) else { break };
        h += step[0];
        f0 += step[1];
        w += step[2];
        if !h.is_finite() || !f0.is_finite() || !w.is_finite() {
            return None;
        }
        w = w.abs().max(1e-9);
        h = h.max(1e-15);
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-10 * (f0.abs() + w) {
            break;
        }
    }
    Some(PeakFit {
        center: f0,
        fwhm: w,
        height: h,
        area: PI * h * w / 2.0,
    })
}

/// Fit the mechanical line shape `y(ω) = floor + a / ((ω²−ω₀²)² + γ²ω²)`
/// on the index window `[lo, hi)`. Returns the fit with `center = ω₀`,
/// `fwhm = γ` (the width of the displacement response), the peak height
/// above the floor and the plain-dω area of the model over ω > 0.
pub fn fit_mechanical_line(
    freqs: &[f64],
    y: &[f64],
    lo: usize,
    hi: usize,
    floor: f64,
) -> Option<PeakFit> {
    let init = fit_lorentzian(freqs, y, lo, hi, floor)?;
    let mut w0 = init.center;
    let mut gamma = init.fwhm;
    let mut a = init.height * gamma * gamma * w0 * w0;
    let f = &freqs[lo..hi];
    let v = &y[lo..hi];
    for _ in 0..80 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (fi, vi) in f.iter().zip(v.iter()) {
            let q = fi * fi - w0 * w0;
            let den = q * q + gamma * gamma * fi * fi;
            if den <= 0.0 {
                return None;
            }
            let model = floor + a / den;
            let r = vi - model;
            let da = 1.0 / den;
            let dw0 = a * 4.0 * w0 * q / (den * den);
            let dg = -a * 2.0 * gamma * fi * fi / (den * den);
            let grad = [da, dw0, dg];
            for m in 0..3 {
                jtr[m] += grad[m] * r;
                for n in 0..3 {
                    jtj[m][n] += grad[m] * grad[n];
                }
            }
        }
        for (m, row) in jtj.iter_mut().enumerate() {
            row[m] *= 1.0 + 1e-9;
        }
        let Some(step) = solve3(jtj, jtr) else { break };
        a += step[0];
        w0 += step[1];
        gamma += step[2];
        if !a.is_finite() || !w0.is_finite() || !gamma.is_finite() {
            return None;
        }
        gamma = gamma.abs().max(1e-9);
        w0 = w0.abs().max(1e-9);
        a = a.max(1e-300);
        if step[1].abs() + step[2].abs() < 1e-10 * (w0 + gamma) {
            break;
        }
    }
    let height = a / (gamma * gamma * w0 * w0 - gamma.powi(4) / 4.0).max(1e-300);
    // plain-dω integral of the model over the positive axis
    let area = a * std::f64::consts::PI / (2.0 * gamma * w0 * w0);
    Some(PeakFit {
        center: w0,
        fwhm: gamma,
        height,
        area,
    })
}

/// Evaluate the mechanical line model of a [`fit_mechanical_line`] result.
pub fn mechanical_line_value(fit: &PeakFit, w: f64) -> f64 {
    let a = fit.height * (fit.fwhm * fit.fwhm * fit.center * fit.center
        - fit.fwhm.powi(4) / 4.0);
    let q = w * w - fit.center * fit.center;
    a / (q * q + fit.fwhm * fit.fwhm * w * w)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let (piv, _) = m
            .iter()
            .enumerate()
            .skip(col)
            .map(|(i, r)| (i, r[col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        m.swap(col, piv);
        if m[col][col].abs() < 1e-300 {
            return None;
        }
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Solve the dense complex system `A x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major, overwritten in place.
pub fn solve_complex(a: &mut [Vec<C64>], b: &mut [C64]) -> Option<()> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm_sqr().total_cmp(&a[j][col].norm_sqr()))?;
        if a[piv][col].norm_sqr() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * b[k];
        }
        b[col] = acc / a[col][col];
    }
    Some(())
}

/// Cholesky factor (lower triangular) of a symmetric positive semi-definite
/// 4×4 matrix, with a tiny diagonal jitter to absorb round-off.
pub fn cholesky4(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let jitter = 1e-12 * (m[0][0] + m[1][1] + m[2][2] + m[3][3]).abs().max(1e-300);
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                let d = s + jitter;
                if d <= 0.0 {
                    if d > -1e-9 * jitter.max(1e-300) {
                        l[i][j] = 0.0;
                        continue;
                    }
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = if l[j][j] != 0.0 { s / l[j][j] } else { 0.0 };
            }
        }
    }
    Some(l)
}

/// Zero-phase second-order Butterworth band-pass, run forward and backward
/// to preserve phase. Used only for display traces.
pub fn bandpass_zero_phase(x: &[f64], fs: f64, f_center: f64, bandwidth: f64) -> Vec<f64> {
    // RBJ biquad band-pass (constant 0 dB peak gain)
    let w0 = TAU * f_center / fs;
    let q = f_center / bandwidth;
    let alpha = w0.sin() / (2.0 * q);
    let b0 = alpha;
    let b1 = 0.0;
    let b2 = -alpha;
    let a0 = 1.0 + alpha;
    let a1 = -2.0 * w0.cos();
    let a2 = 1.0 - alpha;
    let run = |input: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(input.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &xi in input {
            let yi = (b0 * xi + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
            out.push(yi);
        }
        out
    };
    let fwd = run(x);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = run(&rev);
    rev.reverse();
    rev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn welch_recovers_tone_power() {
        let fs = 1e6;
        let f0 = 110e3;
        let n = 1 << 16;
        let x: Vec<f64> = (0..n)
            .map(|i| (TAU * f0 * i as f64 / fs).sin())
            .collect();
        let (freqs, psd) = welch_psd(&x, fs, TAU * 200.0);
        // integrated power of a unit sine is 1/2
        let df = freqs[1] - freqs[0];
        let total: f64 = psd.iter().sum::<f64>() * df;
        assert_relative_eq!(total, 0.5, max_relative = 0.02);
        let peak = freqs[psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0];
        assert!((peak - f0).abs() < 400.0);
    }

    #[test]
    fn lorentzian_fit_recovers_parameters() {
        let f0 = 110e3;
        let w = 1.5e3;
        let h = 3.0;
        let freqs: Vec<f64> = (0..600).map(|i| 100e3 + 30.0 * i as f64).collect();
        let y: Vec<f64> = freqs
            .iter()
            .map(|f| {
                let d = f - f0;
                1.0 + h * (w / 2.0) * (w / 2.0) / (d * d + (w / 2.0) * (w / 2.0))
            })
            .collect();
        let fit = fit_lorentzian(&freqs, &y, 0, freqs.len(), 1.0).unwrap();
        assert_relative_eq!(fit.center, f0, max_relative = 1e-6);
        assert_relative_eq!(fit.fwhm, w, max_relative = 1e-4);
        assert_relative_eq!(fit.height, h, max_relative = 1e-4);
    }

    #[test]
    fn complex_solver_handles_random_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 4;
            let a: Vec<Vec<C64>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                        .collect()
                })
                .collect();
            let x_true: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let mut b: Vec<C64> = (0..n)
                .map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum())
                .collect();
            let mut a_mut = a.clone();
            solve_complex(&mut a_mut, &mut b).unwrap();
            for i in 0..n {
                assert!((b[i] - x_true[i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn bandpass_preserves_in_band_phase() {
        let fs = 4e6;
        let f0 = 113e3;
        let n = 40_000;
        let x: Vec<f64> = (0..n).map(|i| (TAU * f0 * i as f64 / fs).sin()).collect();
        let y = bandpass_zero_phase(&x, fs, 113e3, 40e3);
        // compare away from the edges: zero-phase filtering keeps the carrier aligned
        for i in 15_000..25_000 {
            assert!((y[i] - x[i]).abs() < 0.05);
        }
    }
}
