//! Matched-filter quadrature estimation from heterodyne ring-down traces:
//! per-shot phase-space coefficients with Gram-matrix deconvolution,
//! off-resonance shot-noise references, and ensemble statistics (variance
//! ellipses, added phonons, cross-oscillator correlation with a Fisher
//! interval).
//!
//! The templates are damped exponentials e_j(t) = e^{(iω_j − γ_j) t} on the
//! read-out window, with the inner product ⟨e, s⟩ = ∫ e*(t) s(t) dt
//! discretized by the trapezoid rule. For complex traces the optimal
//! coefficients are α = E⁻¹⟨e, s⟩ with E the Gram matrix. Physical traces
//! are real; there the filter solves the exact least-squares problem for
//! the model s = Σ_j 2 Re(α_j e_j), which augments the Gram system with the
//! counter-rotating overlaps and removes their O(γ/ω) bias.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::ampmodel::{occupation_from_sidebands, SidebandPair, S_SN};
use crate::dynamics::TraceSet;
use crate::model::{cooperativity, SystemConfig};
use crate::spectral::solve_complex;

/// Default offset of the off-resonance shot-noise reference filters from
/// each mechanical frequency (rad/s).
pub fn reference_offset() -> f64 {
    crate::model::hz(20e3)
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("template Gram matrix ill-conditioned (condition number {0:.3e}); near-degenerate templates")]
    IllConditioned(f64),
    #[error("need at least 2 records, got {0}")]
    InsufficientSamples(usize),
    #[error("shot-noise subtraction exceeds the signal variance")]
    NegativeCorrectedVariance,
    #[error("trace read-out window has {got} samples, bank expects {expected}")]
    WindowMismatch { expected: usize, got: usize },
}

/// Matched-filter templates on a fixed read-out window: the two signal
/// templates plus two symmetric off-resonance reference pairs.
pub struct TemplateBank {
    /// Template angular frequencies (rad/s) of the signal pair.
    pub omega: [f64; 2],
    /// Template amplitude decay rates (rad/s).
    pub decay: [f64; 2],
    /// Sample step (s).
    pub dt: f64,
    /// All six templates: e₁, e₂, then the ±offset references of each.
    templates: Vec<Vec<C64>>,
    /// Trapezoid quadrature weights (s).
    weights: Vec<f64>,
    /// Signal-pair Gram matrix.
    gram: [[C64; 2]; 2],
    /// Augmented Gram of the full six-template real-trace system.
    augmented: Vec<Vec<C64>>,
    /// Per-oscillator scale turning the pair-averaged reference coefficient
    /// into a variance-matched estimate of the signal filter's shot
    /// response (the average halves the variance, and the signal pair's
    /// mutual Gram deconvolution inflates it slightly).
    ref_variance_scale: [f64; 2],
}

impl TemplateBank {
    /// Build a bank of `n_samples` points spaced `dt` apart. `omega` and
    /// `decay` are the ring-down frequencies and amplitude decay rates
    /// extracted upstream.
    pub fn new(
        omega: [f64; 2],
        decay: [f64; 2],
        n_samples: usize,
        dt: f64,
    ) -> Result<TemplateBank, FilterError> {
        let offsets = [
            omega[0] - reference_offset(),
            omega[0] + reference_offset(),
            omega[1] - reference_offset(),
            omega[1] + reference_offset(),
        ];
        let mut freqs = vec![omega[0], omega[1]];
        freqs.extend_from_slice(&offsets);
        let decays = [decay[0], decay[1], decay[0], decay[0], decay[1], decay[1]];

        let mut weights = vec![dt; n_samples];
        weights[0] = dt / 2.0;
        weights[n_samples - 1] = dt / 2.0;

        let templates: Vec<Vec<C64>> = freqs
            .iter()
            .zip(decays.iter())
            .map(|(&w, &g)| {
                (0..n_samples)
                    .map(|i| {
                        let t = i as f64 * dt;
                        C64::from_polar((-g * t).exp(), w * t)
                    })
                    .collect()
            })
            .collect();

        let inner = |a: &[C64], b: &[C64], conj_b: bool| -> C64 {
            let mut acc = C64::ZERO;
            for i in 0..n_samples {
                let bb = if conj_b { b[i].conj() } else { b[i] };
                acc += weights[i] * a[i].conj() * bb;
            }
            acc
        };

        let mut gram = [[C64::ZERO; 2]; 2];
        for k in 0..2 {
            for j in 0..2 {
                gram[k][j] = inner(&templates[k], &templates[j], false);
            }
        }
        // condition number of the Hermitian 2x2 signal Gram
        let tr = gram[0][0].re + gram[1][1].re;
        let det = (gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0]).re;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let lam_max = tr / 2.0 + disc;
        let lam_min = tr / 2.0 - disc;
        let cond = if lam_min <= 0.0 {
            f64::INFINITY
        } else {
            lam_max / lam_min
        };
        if cond > 1e8 {
            return Err(FilterError::IllConditioned(cond));
        }

        // augmented 12x12 system for real traces over all six templates
        let n6 = 6;
        let mut augmented = vec![vec![C64::ZERO; 2 * n6]; 2 * n6];
        for k in 0..n6 {
            for j in 0..n6 {
                let e = inner(&templates[k], &templates[j], false);
                let f = inner(&templates[k], &templates[j], true);
                augmented[k][j] = e;
                augmented[k][n6 + j] = f;
                augmented[n6 + k][j] = f.conj();
                augmented[n6 + k][n6 + j] = e.conj();
            }
        }

        // Exact white-noise variances of the solved coefficients: each is a
        // linear functional of the trace with an explicit weight vector
        // W_k(i) = w_i Σ_l [M⁻¹]_{k,l} ẽ_l(i), built from the inverse of
        // the augmented system. The ratio between a signal coefficient and
        // its averaged reference pair calibrates the shot subtraction.
        let mut ginv_cols: Vec<Vec<C64>> = Vec::with_capacity(2 * n6);
        for col in 0..2 * n6 {
            let mut a = augmented.clone();
            let mut b = vec![C64::ZERO; 2 * n6];
            b[col] = C64::new(1.0, 0.0);
            solve_complex(&mut a, &mut b).ok_or(FilterError::IllConditioned(f64::INFINITY))?;
            ginv_cols.push(b);
        }
        let weight_vec = |k: usize| -> Vec<C64> {
            (0..n_samples)
                .map(|i| {
                    let mut acc = C64::ZERO;
                    for l in 0..n6 {
                        acc += ginv_cols[l][k] * templates[l][i].conj()
                            + ginv_cols[n6 + l][k] * templates[l][i];
                    }
                    acc * weights[i]
                })
                .collect()
        };
        let norm2 = |v: &[C64]| -> f64 { v.iter().map(|c| c.norm_sqr()).sum() };
        let ref_variance_scale = [0, 1].map(|j| {
            let sig = norm2(&weight_vec(j));
            let wa = weight_vec(2 + 2 * j);
            let wb = weight_vec(3 + 2 * j);
            let pair: f64 = wa
                .iter()
                .zip(wb.iter())
                .map(|(a, b)| 0.25 * (a + b).norm_sqr())
                .sum();
            if pair > 0.0 {
                (sig / pair).max(0.0)
            } else {
                2.0
            }
        });

        Ok(TemplateBank {
            omega,
            decay,
            dt,
            templates,
            weights,
            gram,
            augmented,
            ref_variance_scale,
        })
    }

    /// Bank matching the read-out window of the configured protocol: the
    /// quadratic-shifted trap frequencies at the probe photon number,
    /// amplitude decay Γ_j/2, and a window of five amplitude decay times.
    pub fn for_readout(config: &SystemConfig, dt: f64) -> Result<TemplateBank, FilterError> {
        let nbar = config
            .schedule
            .segments
            .last()
            .map_or(crate::model::PROBE_NBAR, |s| s.nbar);
        let omega = [
            config.osc[0].effective_omega(nbar),
            config.osc[1].effective_omega(nbar),
        ];
        let decay = [config.osc[0].gamma / 2.0, config.osc[1].gamma / 2.0];
        let window = crate::model::readout_window(&config.osc);
        let n = (window / dt).round() as usize;
        TemplateBank::new(omega, decay, n, dt)
    }

    pub fn n_samples(&self) -> usize {
        self.weights.len()
    }

    /// Scale factors 1/sqrt(ε S_SN C_j Γ_j) that convert raw filter
    /// coefficients into dimensionless oscillator phasors Z_j, evaluated at
    /// the read-out photon number.
    pub fn phasor_scale(config: &SystemConfig) -> [f64; 2] {
        let nbar = config
            .schedule
            .segments
            .last()
            .map_or(crate::model::PROBE_NBAR, |s| s.nbar);
        let drive = config.drive.at(nbar, 0.0);
        [0, 1].map(|j| {
            let c = cooperativity(&config.osc[j], &drive);
            1.0 / (drive.epsilon * S_SN * c * config.osc[j].gamma).sqrt()
        })
    }

    /// Optimal coefficients of a complex trace, α = E⁻¹⟨e, s⟩ over the
    /// signal pair.
    pub fn match_complex(&self, s: &[C64]) -> Result<[C64; 2], FilterError> {
        self.check_len(s.len())?;
        let mut b = [C64::ZERO, C64::ZERO];
        for k in 0..2 {
            let mut acc = C64::ZERO;
            for (i, v) in s.iter().enumerate() {
                acc += self.weights[i] * self.templates[k][i].conj() * v;
            }
            b[k] = acc;
        }
        let det = self.gram[0][0] * self.gram[1][1] - self.gram[0][1] * self.gram[1][0];
        Ok([
            (b[0] * self.gram[1][1] - self.gram[0][1] * b[1]) / det,
            (self.gram[0][0] * b[1] - self.gram[1][0] * b[0]) / det,
        ])
    }

    /// Exact least-squares coefficients of a real trace for the model
    /// s = Σ_j 2 Re(α_j e_j), restricted to the signal pair.
    pub fn match_real(&self, s: &[f64]) -> Result<[C64; 2], FilterError> {
        self.check_len(s.len())?;
        let sol = self.solve_real(s, 2)?;
        Ok([sol[0], sol[1]])
    }

    /// Signal and off-resonance reference coefficients of one real shot
    /// trace, solved jointly so that an in-span noiseless signal leaves
    /// exactly zero in the references. The stored reference is the averaged
    /// ± pair rescaled so its variance estimates the signal filter's shot
    /// response one to one.
    pub fn process_shot(
        &self,
        s: &[f64],
        scale: [f64; 2],
        shot_id: u64,
    ) -> Result<QuadratureRecord, FilterError> {
        self.check_len(s.len())?;
        let sol = self.solve_real(s, 6)?;
        let z = [sol[0] * scale[0], sol[1] * scale[1]];
        let shot_ref = [
            0.5 * (sol[2] + sol[3]) * scale[0] * self.ref_variance_scale[0].sqrt(),
            0.5 * (sol[4] + sol[5]) * scale[1] * self.ref_variance_scale[1].sqrt(),
        ];
        Ok(QuadratureRecord { z, shot_ref, shot_id })
    }

    /// Off-resonance shot-noise reference coefficients of a real trace,
    /// variance-matched to the signal filters (see [`Self::process_shot`]).
    pub fn shot_reference(&self, s: &[f64]) -> Result<[C64; 2], FilterError> {
        Ok(self.process_shot(s, [1.0, 1.0], 0)?.shot_ref)
    }

    /// Record for the read-out window of a simulated trace.
    pub fn process_trace(
        &self,
        config: &SystemConfig,
        trace: &TraceSet,
        shot_id: u64,
    ) -> Result<QuadratureRecord, FilterError> {
        let i0 = (trace.readout_start / trace.dt).round() as usize;
        let n = self.n_samples();
        if i0 + n > trace.len() {
            return Err(FilterError::WindowMismatch {
                expected: n,
                got: trace.len().saturating_sub(i0),
            });
        }
        let window = &trace.het[i0..i0 + n];
        self.process_shot(window, TemplateBank::phasor_scale(config), shot_id)
    }

    fn check_len(&self, got: usize) -> Result<(), FilterError> {
        if got != self.n_samples() {
            return Err(FilterError::WindowMismatch {
                expected: self.n_samples(),
                got,
            });
        }
        Ok(())
    }

    /// Solve the augmented real-trace system over the first `m` templates.
    fn solve_real(&self, s: &[f64], m: usize) -> Result<Vec<C64>, FilterError> {
        let idx: Vec<usize> = (0..m).chain(6..6 + m).collect();
        let mut a: Vec<Vec<C64>> = idx
            .iter()
            .map(|&r| idx.iter().map(|&c| self.augmented[r][c]).collect())
            .collect();
        let mut b: Vec<C64> = Vec::with_capacity(2 * m);
        for k in 0..m {
            let mut acc = C64::ZERO;
            for (i, v) in s.iter().enumerate() {
                acc += self.weights[i] * self.templates[k][i].conj() * v;
            }
            b.push(acc);
        }
        for k in 0..m {
            b.push(b[k].conj());
        }
        solve_complex(&mut a, &mut b)
            .ok_or(FilterError::IllConditioned(f64::INFINITY))?;
        Ok(b[..m].to_vec())
    }
}

/// Per-shot filter output: phasors in dimensionless oscillator units plus
/// the off-resonance shot-noise reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRecord {
    /// Signal phasors Z₁, Z₂.
    pub z: [C64; 2],
    /// Off-resonance reference coefficients, scaled identically.
    pub shot_ref: [C64; 2],
    /// Shot index.
    pub shot_id: u64,
}

/// 1σ covariance ellipse of a 2D (Re, Im) scatter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Ellipse {
    pub var_re: f64,
    pub var_im: f64,
    pub cov: f64,
}

impl Ellipse {
    /// π times the product of the principal standard deviations.
    pub fn area(&self) -> f64 {
        let det = self.var_re * self.var_im - self.cov * self.cov;
        std::f64::consts::PI * det.max(0.0).sqrt()
    }

    /// Difference of variance ellipses with a sampling-noise allowance:
    /// dips below zero inside the slack are clamped, anything beyond it is
    /// a genuine inconsistency.
    fn sub(&self, other: &Ellipse, slack: f64) -> Result<Ellipse, FilterError> {
        let out = Ellipse {
            var_re: self.var_re - other.var_re,
            var_im: self.var_im - other.var_im,
            cov: self.cov - other.cov,
        };
        if out.var_re < -slack || out.var_im < -slack {
            return Err(FilterError::NegativeCorrectedVariance);
        }
        Ok(Ellipse {
            var_re: out.var_re.max(0.0),
            var_im: out.var_im.max(0.0),
            cov: out.cov,
        })
    }
}

/// Ensemble statistics of a set of shots against an uncoupled reference
/// ensemble.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnsembleStats {
    /// Mean phasors of the read-out ensemble.
    pub mean: [[f64; 2]; 2],
    /// 1σ ellipses of the mean-subtracted signal scatter, per oscillator.
    pub ellipse_signal: [Ellipse; 2],
    /// 1σ ellipses of the shot-noise reference scatter.
    pub ellipse_shot: [Ellipse; 2],
    /// Shot-subtracted phase-space areas of the reference ensemble.
    pub a_ref: [f64; 2],
    /// Shot-subtracted phase-space areas after coupling.
    pub a_rd: [f64; 2],
    /// Added phonons per oscillator.
    pub delta_nu: [f64; 2],
    /// Cross-oscillator correlation, averaged over Re and Im quadratures.
    pub r: f64,
    /// 1σ Fisher interval of `r`.
    pub r_interval: (f64, f64),
    /// Shots in the read-out ensemble.
    pub n_shots: usize,
}

fn cov2<F, G>(records: &[QuadratureRecord], f: F, g: G) -> f64
where
    F: Fn(&QuadratureRecord) -> f64,
    G: Fn(&QuadratureRecord) -> f64,
{
    let n = records.len() as f64;
    let mf: f64 = records.iter().map(&f).sum::<f64>() / n;
    let mg: f64 = records.iter().map(&g).sum::<f64>() / n;
    records
        .iter()
        .map(|r| (f(r) - mf) * (g(r) - mg))
        .sum::<f64>()
        / (n - 1.0)
}

fn ellipse_of<F>(records: &[QuadratureRecord], pick: F) -> Ellipse
where
    F: Fn(&QuadratureRecord) -> C64 + Copy,
{
    Ellipse {
        var_re: cov2(records, |r| pick(r).re, |r| pick(r).re),
        var_im: cov2(records, |r| pick(r).im, |r| pick(r).im),
        cov: cov2(records, |r| pick(r).re, |r| pick(r).im),
    }
}

/// Reduce shot ensembles into phase-space statistics: mean phasors, signal
/// and shot-noise variance ellipses, added phonons from the phase-space
/// area growth over the reference ensemble, and the cross-oscillator
/// correlation with shot noise subtracted from the denominator and
/// reference-ensemble correlations subtracted from the numerator.
pub fn ensemble_stats(
    readout: &[QuadratureRecord],
    reference: &[QuadratureRecord],
    sidebands: &SidebandPair,
) -> Result<EnsembleStats, FilterError> {
    if readout.len() < 2 {
        return Err(FilterError::InsufficientSamples(readout.len()));
    }
    if reference.len() < 2 {
        return Err(FilterError::InsufficientSamples(reference.len()));
    }
    let n = readout.len() as f64;
    let mean_c = [0, 1].map(|j| {
        readout.iter().map(|r| r.z[j]).sum::<C64>() / n
    });
    let ellipse_signal = [
        ellipse_of(readout, |r| r.z[0]),
        ellipse_of(readout, |r| r.z[1]),
    ];
    let ellipse_shot = [
        ellipse_of(readout, |r| r.shot_ref[0]),
        ellipse_of(readout, |r| r.shot_ref[1]),
    ];
    let ref_signal = [
        ellipse_of(reference, |r| r.z[0]),
        ellipse_of(reference, |r| r.z[1]),
    ];
    let ref_shot = [
        ellipse_of(reference, |r| r.shot_ref[0]),
        ellipse_of(reference, |r| r.shot_ref[1]),
    ];

    // sampling slack: the standard error of a variance estimate over n
    // shots, with a generous multiplier
    let slack_of = |e: &Ellipse, n_records: usize| {
        8.0 * 0.5 * (e.var_re + e.var_im) * (2.0 / n_records as f64).sqrt()
    };
    let mut a_rd = [0.0; 2];
    let mut a_ref = [0.0; 2];
    for j in 0..2 {
        a_rd[j] = ellipse_signal[j]
            .sub(&ellipse_shot[j], slack_of(&ellipse_signal[j], readout.len()))?
            .area();
        a_ref[j] = ref_signal[j]
            .sub(&ref_shot[j], slack_of(&ref_signal[j], reference.len()))?
            .area();
    }

    // Δν = (A_rd − A_ref)/A_ref · (ν + 1/2): the area ratio measures the
    // fractional growth of the total variance ν + 1/2 (zero point
    // included), and the sideband asymmetry thermometer anchors its
    // absolute scale.
    let nu_ref = occupation_from_sidebands(sidebands).unwrap_or(0.0);
    let delta_nu = [0, 1].map(|j| {
        if a_ref[j] <= 0.0 {
            0.0
        } else {
            (a_rd[j] - a_ref[j]) / a_ref[j] * (nu_ref + 0.5)
        }
    });

    // correlation with shot subtracted in the denominators and the
    // reference-ensemble (uncoupled + filter-induced) correlations
    // subtracted in the numerator
    let num_re = cov2(readout, |r| r.z[0].re, |r| r.z[1].re)
        - cov2(reference, |r| r.z[0].re, |r| r.z[1].re);
    let num_im = cov2(readout, |r| r.z[0].im, |r| r.z[1].im)
        - cov2(reference, |r| r.z[0].im, |r| r.z[1].im);
    let den_re = [0, 1].map(|j| ellipse_signal[j].var_re - ellipse_shot[j].var_re);
    let den_im = [0, 1].map(|j| ellipse_signal[j].var_im - ellipse_shot[j].var_im);
    let scale = ellipse_signal[0].var_re + ellipse_signal[1].var_re;
    let tol = slack_of(&ellipse_signal[0], readout.len())
        .max(slack_of(&ellipse_signal[1], readout.len()))
        .max(1e-12 * scale.abs());
    if den_re.iter().any(|v| *v < -tol) || den_im.iter().any(|v| *v < -tol) {
        return Err(FilterError::NegativeCorrectedVariance);
    }
    // (near-)zero corrected variance, a degenerate ensemble, has no
    // correlation to speak of
    let tiny = 1e-9 * scale.abs().max(1e-300);
    let ratio = |num: f64, den: [f64; 2]| {
        if den[0] <= tiny || den[1] <= tiny {
            0.0
        } else {
            num / (den[0] * den[1]).sqrt()
        }
    };
    let r_re = ratio(num_re, den_re);
    let r_im = ratio(num_im, den_im);
    let r = 0.5 * (r_re + r_im);

    // Fisher interval: Re and Im act as independent measurements
    let clamp = |v: f64| v.clamp(-0.999_999, 0.999_999);
    let z_mean = 0.5 * (clamp(r_re).atanh() + clamp(r_im).atanh());
    let sigma_z = 1.0 / ((2.0 * n - 3.0).sqrt());
    let r_interval = ((z_mean - sigma_z).tanh(), (z_mean + sigma_z).tanh());

    Ok(EnsembleStats {
        mean: [
            [mean_c[0].re, mean_c[0].im],
            [mean_c[1].re, mean_c[1].im],
        ],
        ellipse_signal,
        ellipse_shot,
        a_ref,
        a_rd,
        delta_nu,
        r,
        r_interval,
        n_shots: readout.len(),
    })
}

/// Same-oscillator Re–Im covariance normalized like `r`; uncorrelated for
/// a stationary ensemble, it validates the statistical analysis.
pub fn control_statistic(records: &[QuadratureRecord]) -> [f64; 2] {
    [0, 1].map(|j| {
        let var_re = cov2(records, |r| r.z[j].re, |r| r.z[j].re);
        let var_im = cov2(records, |r| r.z[j].im, |r| r.z[j].im);
        let c = cov2(records, |r| r.z[j].re, |r| r.z[j].im);
        c / (var_re * var_im).sqrt()
    })
}
