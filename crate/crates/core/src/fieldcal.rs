//! Magnetic-field calibration from Hahn-echo modulation by the carbon-13
//! nuclear-spin bath.
//!
//! Two echo models are fitted depending on the field orientation:
//!
//! ```text
//! parallel:       A * exp(B * sin^4(2 pi f tau + phi) - tau / T_damp) + a tau + DC
//! perpendicular:  A * sin^2(2 pi f1 tau) * sin^2(2 pi f2 tau) + DC
//! ```
//!
//! Frequencies are in MHz and delays in microseconds. Because sin^4 and
//! sin^2 modulate at twice their argument frequency, FFT peaks appear at
//! 2f and the fit seeds divide the dominant peak frequency by two. The
//! fitted bath frequency against the expected Larmor value yields the
//! corrected field amplitude.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::PhysicalConstants;
use crate::optimize::{fit_least_squares, LeastSquaresOptions, Transform};

/// Minimum number of samples for FFT seeding.
pub const MIN_FFT_SAMPLES: usize = 32;

/// Conservative lower bound on the relative field uncertainty.
pub const FIELD_UNCERTAINTY_FLOOR: f64 = 0.005;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("echo trace needs at least {MIN_FFT_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("echo delays must be strictly increasing (violation at sample {0})")]
    NonMonotonicDelays(usize),
    #[error("no FFT peak above the noise floor; field calibration impossible")]
    NoModulationPeak,
    #[error("echo fit did not converge")]
    FitDiverged,
    #[error("expected a positive value for {name}, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EchoOrientation {
    Parallel,
    Perpendicular,
}

/// A Hahn-echo trace: (tau in microseconds, normalized signal).
#[derive(Debug, Clone)]
pub struct EchoTrace {
    pub points: Vec<(f64, f64)>,
    pub orientation: EchoOrientation,
    /// Nominal field amplitude the trace was recorded at, tesla.
    pub b_nominal: f64,
}

impl EchoTrace {
    pub fn new(
        points: Vec<(f64, f64)>,
        orientation: EchoOrientation,
        b_nominal: f64,
    ) -> Result<Self, CalibrationError> {
        if points.len() < MIN_FFT_SAMPLES {
            return Err(CalibrationError::TooFewSamples(points.len()));
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(CalibrationError::NonMonotonicDelays(i + 1));
            }
        }
        Ok(Self {
            points,
            orientation,
            b_nominal,
        })
    }

    fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    fn signal(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Result of fitting one echo trace.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "orientation", rename_all = "lowercase")]
pub enum EchoFit {
    Parallel {
        amplitude: f64,
        modulation_depth: f64,
        freq_mhz: f64,
        freq_stderr_mhz: f64,
        phase_rad: f64,
        t_damp_us: f64,
        slope: f64,
        dc: f64,
        residual_rms: f64,
    },
    Perpendicular {
        amplitude: f64,
        /// Bath frequency (nearest to the expected Larmor value), MHz.
        f1_mhz: f64,
        /// Proximal-spin frequency (the larger of the two), MHz.
        f2_mhz: f64,
        freq_stderr_mhz: f64,
        dc: f64,
        residual_rms: f64,
    },
}

impl EchoFit {
    /// The frequency used for field correction (bath Larmor), MHz.
    pub fn bath_frequency_mhz(&self) -> f64 {
        match self {
            EchoFit::Parallel { freq_mhz, .. } => *freq_mhz,
            EchoFit::Perpendicular { f1_mhz, .. } => *f1_mhz,
        }
    }

    pub fn bath_frequency_stderr_mhz(&self) -> f64 {
        match self {
            EchoFit::Parallel {
                freq_stderr_mhz, ..
            }
            | EchoFit::Perpendicular {
                freq_stderr_mhz, ..
            } => *freq_stderr_mhz,
        }
    }
}

/// Expected Larmor precession of the carbon-13 bath, MHz:
/// half the gyromagnetic ratio times the field.
pub fn expected_larmor(b_nominal: f64, constants: &PhysicalConstants) -> f64 {
    0.5 * constants.gamma_c13 * b_nominal
}

/// Corrected field amplitude with uncertainty, tesla.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrectedField {
    pub b_corrected: f64,
    pub uncertainty: f64,
}

/// Rescale the nominal field by measured-over-expected bath frequency.
///
/// The frequency standard error propagates linearly and is floored at the
/// conservative 0.5% coil uncertainty.
pub fn corrected_field(
    f_measured_mhz: f64,
    f_stderr_mhz: f64,
    b_nominal: f64,
    constants: &PhysicalConstants,
) -> Result<CorrectedField, CalibrationError> {
    if f_measured_mhz.is_nan() || f_measured_mhz <= 0.0 {
        return Err(CalibrationError::NonPositive {
            name: "f_measured",
            value: f_measured_mhz,
        });
    }
    if b_nominal.is_nan() || b_nominal <= 0.0 {
        return Err(CalibrationError::NonPositive {
            name: "b_nominal",
            value: b_nominal,
        });
    }
    let expected = expected_larmor(b_nominal, constants);
    let b_corrected = b_nominal * f_measured_mhz / expected;
    let from_fit = b_corrected * (f_stderr_mhz / f_measured_mhz).abs();
    Ok(CorrectedField {
        b_corrected,
        uncertainty: from_fit.max(FIELD_UNCERTAINTY_FLOOR * b_corrected),
    })
}

/// Magnitude spectrum of an echo trace, DC removed.
///
/// Non-uniform delays are linearly resampled onto a uniform grid of the same
/// length; a Hann window suppresses leakage on short traces. Returns
/// (frequency in MHz, amplitude) for the positive-frequency bins.
pub fn fft_spectrum(trace: &EchoTrace) -> Result<Vec<(f64, f64)>, CalibrationError> {
    let n = trace.points.len();
    if n < MIN_FFT_SAMPLES {
        return Err(CalibrationError::TooFewSamples(n));
    }
    let taus = trace.taus();
    let signal = trace.signal();
    let t0 = taus[0];
    let t1 = taus[n - 1];
    let dt = (t1 - t0) / (n - 1) as f64;

    // linear resampling onto the uniform grid
    let mut uniform = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let t = t0 + dt * k as f64;
        while seg + 2 < n && taus[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (taus[seg], taus[seg + 1]);
        let (ya, yb) = (signal[seg], signal[seg + 1]);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        uniform.push(ya + w * (yb - ya));
    }

    let mean = uniform.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = uniform
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos());
            Complex::new((y - mean) * hann, 0.0)
        })
        .collect();

    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let df = 1.0 / (dt * n as f64);
    Ok((1..n / 2)
        .map(|k| (df * k as f64, buf[k].norm() * 2.0 / n as f64))
        .collect())
}

/// Local maxima of a spectrum sorted by amplitude, strongest first.
///
/// Peaks below a small fraction of the signal span are discarded, so a
/// constant trace yields an empty list.
pub fn dominant_peaks(spectrum: &[(f64, f64)], signal_span: f64) -> Vec<(f64, f64)> {
    let floor = 1e-9 * signal_span.abs().max(1e-300);
    let mut peaks: Vec<(f64, f64)> = spectrum
        .windows(3)
        .filter_map(|w| {
            let (prev, mid, next) = (w[0].1, w[1].1, w[2].1);
            (mid > prev && mid >= next && mid > floor).then_some(w[1])
        })
        .collect();
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    peaks
}

fn signal_span(signal: &[f64]) -> f64 {
    let max = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = signal.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Parallel echo model of one point. The argument list mirrors the model's
/// parameter set.
#[allow(clippy::too_many_arguments)]
pub fn parallel_echo_model(
    tau: f64,
    amplitude: f64,
    depth: f64,
    freq_mhz: f64,
    phase: f64,
    t_damp: f64,
    slope: f64,
    dc: f64,
) -> f64 {
    let s = (2.0 * std::f64::consts::PI * freq_mhz * tau + phase).sin();
    amplitude * (depth * s.powi(4) - tau / t_damp).exp() + slope * tau + dc
}

/// Perpendicular echo model of one point.
pub fn perpendicular_echo_model(
    tau: f64,
    amplitude: f64,
    f1_mhz: f64,
    f2_mhz: f64,
    dc: f64,
) -> f64 {
    let s1 = (2.0 * std::f64::consts::PI * f1_mhz * tau).sin();
    let s2 = (2.0 * std::f64::consts::PI * f2_mhz * tau).sin();
    amplitude * s1 * s1 * s2 * s2 + dc
}

/// Fit the echo model matching the trace orientation.
///
/// Frequency seeds come from the dominant FFT peaks (halved for the
/// second-harmonic modulation). For perpendicular traces the bath line is
/// the one nearest the expected Larmor value and the proximal-spin line is
/// the larger of the two.
pub fn fit_echo_modulation(
    trace: &EchoTrace,
    constants: &PhysicalConstants,
) -> Result<EchoFit, CalibrationError> {
    let spectrum = fft_spectrum(trace)?;
    let signal = trace.signal();
    let span = signal_span(&signal);
    let peaks = dominant_peaks(&spectrum, span);

    // noise floor: the dominant peak must stand clearly above the median bin
    let mut amplitudes: Vec<f64> = spectrum.iter().map(|p| p.1).collect();
    amplitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = amplitudes[amplitudes.len() / 2];
    let strong: Vec<(f64, f64)> = peaks
        .iter()
        .filter(|(_, a)| *a > 5.0 * median.max(1e-12 * span.abs().max(1e-300)))
        .cloned()
        .collect();
    if strong.is_empty() {
        return Err(CalibrationError::NoModulationPeak);
    }

    match trace.orientation {
        EchoOrientation::Parallel => fit_parallel(trace, &strong),
        EchoOrientation::Perpendicular => fit_perpendicular(trace, &strong, constants),
    }
}

fn fit_parallel(trace: &EchoTrace, peaks: &[(f64, f64)]) -> Result<EchoFit, CalibrationError> {
    let taus = trace.taus();
    let signal = trace.signal();
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let span = signal_span(&signal);
    let t_span = taus[n - 1] - taus[0];
    // the sin^4 modulation shows up at twice the model frequency
    let f_seed = peaks[0].0 / 2.0;

    let slope_seed = (signal[n - 1] - signal[0]) / t_span;
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        Some(
            taus.iter()
                .zip(&signal)
                .map(|(&t, &y)| {
                    parallel_echo_model(t, p[0], p[1], p[2], p[3], p[4], p[5], p[6]) - y
                })
                .collect(),
        )
    };
    let transforms = [
        Transform::Positive, // amplitude
        Transform::Identity, // modulation depth (sign free: dips or revival peaks)
        Transform::Positive, // frequency
        Transform::Identity, // phase
        Transform::Positive, // damping time
        Transform::Identity, // slope
        Transform::Identity, // dc
    ];
    let options = LeastSquaresOptions::default();

    // multi-start over phase (sin^4 is pi-periodic in phi) and depth sign
    let mut best: Option<crate::optimize::LeastSquaresReport> = None;
    for k in 0..6 {
        for depth0 in [-1.0, 1.0] {
            let phase0 = std::f64::consts::PI * k as f64 / 6.0;
            let initial = [
                span.max(1e-6),
                depth0,
                f_seed,
                phase0,
                t_span,
                slope_seed,
                mean,
            ];
            if let Ok(report) = fit_least_squares(residuals, &initial, &transforms, &options) {
                if best.as_ref().is_none_or(|b| report.cost < b.cost) {
                    best = Some(report);
                }
            }
        }
    }
    let report = best.ok_or(CalibrationError::FitDiverged)?;
    if !report.converged {
        return Err(CalibrationError::FitDiverged);
    }
    let rms = (report.cost / n as f64).sqrt();
    Ok(EchoFit::Parallel {
        amplitude: report.params[0],
        modulation_depth: report.params[1],
        freq_mhz: report.params[2],
        freq_stderr_mhz: report.stderr[2],
        phase_rad: report.params[3],
        t_damp_us: report.params[4],
        slope: report.params[5],
        dc: report.params[6],
        residual_rms: rms,
    })
}

fn fit_perpendicular(
    trace: &EchoTrace,
    peaks: &[(f64, f64)],
    constants: &PhysicalConstants,
) -> Result<EchoFit, CalibrationError> {
    let taus = trace.taus();
    let signal = trace.signal();
    let n = signal.len();
    let span = signal_span(&signal);
    let min = signal.iter().cloned().fold(f64::INFINITY, f64::min);

    let expected = expected_larmor(trace.b_nominal, constants);
    // candidates at half the two strongest peaks: the product model puts the
    // mixing lines at half the amplitude of the 2 f1 and 2 f2 mains
    let mut candidates: Vec<f64> = peaks.iter().take(2).map(|p| p.0 / 2.0).collect();
    if candidates.len() == 1 {
        candidates.push(candidates[0] * 2.0);
    }
    // bath seed: candidate closest to the expected Larmor frequency
    let bath_seed = candidates
        .iter()
        .cloned()
        .min_by(|a, b| {
            (a - expected)
                .abs()
                .partial_cmp(&(b - expected).abs())
                .unwrap()
        })
        .unwrap();
    let other_seed = candidates
        .iter()
        .cloned()
        .filter(|f| (*f - bath_seed).abs() > 1e-12)
        .max_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap_or(bath_seed * 2.0);

    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        Some(
            taus.iter()
                .zip(&signal)
                .map(|(&t, &y)| perpendicular_echo_model(t, p[0], p[1], p[2], p[3]) - y)
                .collect(),
        )
    };
    let transforms = [
        Transform::Positive,
        Transform::Positive,
        Transform::Positive,
        Transform::Identity,
    ];
    let initial = [span.max(1e-6), bath_seed, other_seed, min];
    let report = fit_least_squares(
        residuals,
        &initial,
        &transforms,
        &LeastSquaresOptions::default(),
    )
    .map_err(|_| CalibrationError::FitDiverged)?;
    if !report.converged {
        return Err(CalibrationError::FitDiverged);
    }

    // assign the enhanced (higher) frequency to the proximal spin
    let (mut f1, mut f2) = (report.params[1], report.params[2]);
    let (mut s1, mut s2) = (report.stderr[1], report.stderr[2]);
    if f1 > f2 {
        std::mem::swap(&mut f1, &mut f2);
        std::mem::swap(&mut s1, &mut s2);
    }
    let _ = s2;
    let rms = (report.cost / n as f64).sqrt();
    Ok(EchoFit::Perpendicular {
        amplitude: report.params[0],
        f1_mhz: f1,
        f2_mhz: f2,
        freq_stderr_mhz: s1,
        dc: report.params[3],
        residual_rms: rms,
    })
}
