//! CPMG coherence-decay analysis: tail normalization, stretched-exponential
//! envelope fits at fixed stretching factor, and the T2-vs-pulse-number
//! power law.
//!
//! The decay model is `A * exp(-(t / T2)^xi) + 0.5` over total evolution
//! time t = N tau, with xi frozen (default 4). Raw traces are rescaled so
//! the mean of the last ten points sits at fidelity 0.5; an ideal trace then
//! starts near A + 0.5.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{fit_least_squares, LeastSquaresOptions, Transform};

/// Default stretching factor of the decay envelope.
pub const DEFAULT_XI: f64 = 4.0;

/// Number of trailing points whose mean defines the saturation level.
pub const TAIL_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum CoherenceError {
    #[error("decay trace needs at least {TAIL_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("n_pulses must be >= 1")]
    InvalidPulseCount,
    #[error("total time must be increasing (violation at sample {0})")]
    NonMonotonicTime(usize),
    #[error("saturation tail mean must be positive, got {0}")]
    NonPositiveTail(f64),
    #[error("trace must be normalized before fitting")]
    NotNormalized,
    #[error("stretched-exponential fit did not converge")]
    FitDiverged,
    #[error("fitted T2 = {t2_ms} ms exceeds 10x the trace span ({span_ms} ms); unreliable")]
    UnreliableT2 { t2_ms: f64, span_ms: f64 },
    #[error("power-law fit needs >= 3 distinct pulse numbers, got {0}")]
    TooFewPulseCounts(usize),
    #[error("power-law fit requires positive T2 and N values")]
    NonPositivePowerLawInput,
}

/// One CPMG decay record: (total evolution time in ms, signal).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayTrace {
    pub n_pulses: u32,
    pub points: Vec<(f64, f64)>,
    pub normalized: bool,
}

impl DecayTrace {
    pub fn new(n_pulses: u32, points: Vec<(f64, f64)>) -> Result<Self, CoherenceError> {
        if n_pulses < 1 {
            return Err(CoherenceError::InvalidPulseCount);
        }
        if points.len() < TAIL_POINTS {
            return Err(CoherenceError::TooFewPoints(points.len()));
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(CoherenceError::NonMonotonicTime(i + 1));
            }
        }
        Ok(Self {
            n_pulses,
            points,
            normalized: false,
        })
    }

    pub fn span_ms(&self) -> f64 {
        self.points.last().unwrap().0 - self.points.first().unwrap().0
    }
}

/// Stretched-exponential fit of one trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoherenceResult {
    pub n_pulses: u32,
    pub t2_ms: f64,
    pub amplitude: f64,
    /// Stretching factor the fit was run at (never fitted).
    pub xi: f64,
}

/// T2 proportional to N^beta across a CPMG suite.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerLawFit {
    pub beta: f64,
    pub beta_stderr: f64,
    /// Intercept of the log-log regression: log(T2 at N = 1).
    pub log_intercept: f64,
}

/// Rescale a trace so the mean of its last ten points equals 0.5.
///
/// The map is a pure rescaling (signal / (2 * tail mean)), which makes the
/// operation idempotent and keeps the fitted T2 identical to a fit of the
/// raw data with a free offset.
pub fn normalize_decay(trace: &DecayTrace) -> Result<DecayTrace, CoherenceError> {
    let n = trace.points.len();
    if n < TAIL_POINTS {
        return Err(CoherenceError::TooFewPoints(n));
    }
    let tail_mean = trace.points[n - TAIL_POINTS..]
        .iter()
        .map(|p| p.1)
        .sum::<f64>()
        / TAIL_POINTS as f64;
    if tail_mean.is_nan() || tail_mean <= 0.0 {
        return Err(CoherenceError::NonPositiveTail(tail_mean));
    }
    let scale = 0.5 / tail_mean;
    Ok(DecayTrace {
        n_pulses: trace.n_pulses,
        points: trace.points.iter().map(|&(t, y)| (t, y * scale)).collect(),
        normalized: true,
    })
}

/// Stretched-exponential decay value at total time t.
pub fn decay_model(t: f64, amplitude: f64, t2: f64, xi: f64) -> f64 {
    amplitude * (-(t / t2).powf(xi)).exp() + 0.5
}

/// Fit `A * exp(-(t/T2)^xi) + 0.5` to a normalized trace with xi frozen.
pub fn fit_stretched_exponential(
    trace: &DecayTrace,
    xi: f64,
) -> Result<CoherenceResult, CoherenceError> {
    if !trace.normalized {
        return Err(CoherenceError::NotNormalized);
    }
    let times: Vec<f64> = trace.points.iter().map(|p| p.0).collect();
    let signal: Vec<f64> = trace.points.iter().map(|p| p.1).collect();
    let span = trace.span_ms();

    // T2 seed: first crossing of A/e below the plateau
    let a_seed = (signal[0] - 0.5).clamp(1e-3, 0.999);
    let threshold = 0.5 + a_seed / std::f64::consts::E;
    let t2_seed = times
        .iter()
        .zip(&signal)
        .find(|(_, &y)| y < threshold)
        .map(|(&t, _)| t)
        .unwrap_or(0.5 * span)
        .max(1e-6);

    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        Some(
            times
                .iter()
                .zip(&signal)
                .map(|(&t, &y)| decay_model(t, p[0], p[1], xi) - y)
                .collect(),
        )
    };
    let report = fit_least_squares(
        residuals,
        &[a_seed, t2_seed],
        &[Transform::UnitInterval, Transform::Positive],
        &LeastSquaresOptions::default(),
    )
    .map_err(|_| CoherenceError::FitDiverged)?;
    if !report.converged {
        return Err(CoherenceError::FitDiverged);
    }
    let t2_ms = report.params[1];
    if t2_ms > 10.0 * span {
        return Err(CoherenceError::UnreliableT2 {
            t2_ms,
            span_ms: span,
        });
    }
    Ok(CoherenceResult {
        n_pulses: trace.n_pulses,
        t2_ms,
        amplitude: report.params[0],
        xi,
    })
}

/// Ordinary least-squares regression of log T2 on log N.
pub fn fit_power_law(results: &[(u32, f64)]) -> Result<PowerLawFit, CoherenceError> {
    let mut distinct: Vec<u32> = results.iter().map(|r| r.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CoherenceError::TooFewPulseCounts(distinct.len()));
    }
    if results
        .iter()
        .any(|&(n, t2)| n < 1 || t2.is_nan() || t2 <= 0.0)
    {
        return Err(CoherenceError::NonPositivePowerLawInput);
    }

    let n = results.len() as f64;
    let xs: Vec<f64> = results.iter().map(|r| (r.0 as f64).ln()).collect();
    let ys: Vec<f64> = results.iter().map(|r| r.1.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let beta = sxy / sxx;
    let intercept = y_mean - beta * x_mean;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + beta * x)).powi(2))
        .sum();
    let dof = (results.len() as f64 - 2.0).max(1.0);
    let beta_stderr = (rss / dof / sxx).sqrt();
    Ok(PowerLawFit {
        beta,
        beta_stderr,
        log_intercept: intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_trace(n_pulses: u32, t2_ms: f64, amplitude: f64, n_points: usize) -> DecayTrace {
        let t_max = 3.0 * t2_ms;
        let points: Vec<(f64, f64)> = (0..n_points)
            .map(|k| {
                let t = t_max * (k as f64 + 0.5) / n_points as f64;
                (t, decay_model(t, amplitude, t2_ms, DEFAULT_XI))
            })
            .collect();
        let mut trace = DecayTrace::new(n_pulses, points).unwrap();
        trace.normalized = true;
        trace
    }

    #[test]
    fn constant_trace_normalizes_to_half() {
        let points: Vec<(f64, f64)> = (0..20).map(|k| (k as f64 + 1.0, 4200.0)).collect();
        let trace = DecayTrace::new(1, points).unwrap();
        let normalized = normalize_decay(&trace).unwrap();
        for &(_, y) in &normalized.points {
            assert!((y - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_mean_lands_exactly_on_half() {
        let trace = synthetic_trace(8, 1.0, 0.5, 40);
        // raw counts version of the same shape
        let raw = DecayTrace::new(
            8,
            trace.points.iter().map(|&(t, y)| (t, 1234.0 * y)).collect(),
        )
        .unwrap();
        let normalized = normalize_decay(&raw).unwrap();
        let n = normalized.points.len();
        let tail: f64 = normalized.points[n - TAIL_POINTS..]
            .iter()
            .map(|p| p.1)
            .sum::<f64>()
            / 10.0;
        assert!((tail - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let trace = synthetic_trace(4, 2.0, 0.4, 50);
        let once = normalize_decay(&trace).unwrap();
        let twice = normalize_decay(&once).unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            assert!((a.1 - b.1).abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_t2_recovery() {
        // anchors: N = 64 at 10 ms and N = 1 at 179 us
        for (n_pulses, t2) in [(64u32, 10.0), (1u32, 0.179)] {
            let trace = synthetic_trace(n_pulses, t2, 0.5, 60);
            let fit = fit_stretched_exponential(&trace, DEFAULT_XI).unwrap();
            assert!(
                ((fit.t2_ms - t2) / t2).abs() < 1e-6,
                "N={n_pulses}: got {} want {t2}",
                fit.t2_ms
            );
        }
    }

    #[test]
    fn normalization_leaves_t2_invariant() {
        let trace = synthetic_trace(16, 4.0, 0.37, 60);
        let raw = DecayTrace::new(
            16,
            trace.points.iter().map(|&(t, y)| (t, 987.0 * y)).collect(),
        )
        .unwrap();
        let fit_normalized =
            fit_stretched_exponential(&normalize_decay(&raw).unwrap(), DEFAULT_XI).unwrap();
        let direct = fit_stretched_exponential(&trace, DEFAULT_XI).unwrap();
        assert!(((fit_normalized.t2_ms - direct.t2_ms) / direct.t2_ms).abs() < 1e-9);
    }

    #[test]
    fn residuals_unbiased_on_noiseless_data() {
        let trace = synthetic_trace(32, 6.0, 0.45, 80);
        let fit = fit_stretched_exponential(&trace, DEFAULT_XI).unwrap();
        let mean_residual: f64 = trace
            .points
            .iter()
            .map(|&(t, y)| decay_model(t, fit.amplitude, fit.t2_ms, fit.xi) - y)
            .sum::<f64>()
            / trace.points.len() as f64;
        assert!(mean_residual.abs() < 1e-3 * fit.amplitude);
    }

    #[test]
    fn power_law_exact_cases() {
        let linear: Vec<(u32, f64)> = [1u32, 2, 4, 8, 16, 32, 64]
            .iter()
            .map(|&n| (n, 0.2 * n as f64))
            .collect();
        let fit = fit_power_law(&linear).unwrap();
        assert!((fit.beta - 1.0).abs() < 1e-12);

        let constant: Vec<(u32, f64)> = [1u32, 4, 16].iter().map(|&n| (n, 3.3)).collect();
        let fit = fit_power_law(&constant).unwrap();
        assert!(fit.beta.abs() < 1e-12);
    }

    #[test]
    fn power_law_recovers_fractional_exponent() {
        let beta = 0.95;
        let suite: Vec<(u32, f64)> = (0..7)
            .map(|k| {
                let n = 1u32 << k;
                (n, 0.179 * (n as f64).powf(beta))
            })
            .collect();
        let fit = fit_power_law(&suite).unwrap();
        assert!((fit.beta - beta).abs() < 1e-12f64.max(fit.beta_stderr));
    }

    #[test]
    fn power_law_scale_invariance() {
        let suite: Vec<(u32, f64)> = (0..7)
            .map(|k| {
                let n = 1u32 << k;
                (
                    n,
                    0.2 * (n as f64).powf(0.9) * (1.0 + 0.01 * (k as f64).sin()),
                )
            })
            .collect();
        let base = fit_power_law(&suite).unwrap();
        let scaled: Vec<(u32, f64)> = suite.iter().map(|&(n, t2)| (n, 7.3 * t2)).collect();
        let scaled_fit = fit_power_law(&scaled).unwrap();
        assert!((base.beta - scaled_fit.beta).abs() < 1e-12);
        assert!((scaled_fit.log_intercept - base.log_intercept - 7.3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            fit_power_law(&[(1, 1.0), (2, 2.0)]),
            Err(CoherenceError::TooFewPulseCounts(2))
        ));
        assert!(matches!(
            fit_power_law(&[(1, 1.0), (2, -2.0), (4, 4.0)]),
            Err(CoherenceError::NonPositivePowerLawInput)
        ));
        let trace = synthetic_trace(4, 2.0, 0.4, 50);
        let mut raw = trace.clone();
        raw.normalized = false;
        assert!(matches!(
            fit_stretched_exponential(&raw, DEFAULT_XI),
            Err(CoherenceError::NotNormalized)
        ));
        assert!(DecayTrace::new(0, vec![(0.0, 1.0); 12]).is_err());
        assert!(DecayTrace::new(1, vec![(0.0, 1.0); 4]).is_err());
    }
}
