//! Statistical post-processing of chain output: autocorrelation functions,
//! integrated autocorrelation times with automatic windowing, binning
//! checks, and the error-propagated estimator results all samplers report.

use rustfft::{num_complex::Complex as FftComplex, FftPlanner};
use serde::Serialize;

use crate::error::{MagicError, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimatorResult {
    pub value: f64,
    /// Autocorrelation-corrected standard error.
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub tau_int: f64,
    pub n_samples: usize,
    pub n_effective: f64,
}

impl EstimatorResult {
    pub fn from_value(value: f64, stderr: f64, tau_int: f64, n_samples: usize) -> Self {
        Self {
            value,
            stderr,
            ci95: (value - 1.96 * stderr, value + 1.96 * stderr),
            tau_int,
            n_samples,
            n_effective: n_samples as f64 / tau_int,
        }
    }

    /// Divide by a constant (e.g. per-site densities), scaling the error.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_value(
            self.value * factor,
            self.stderr * factor.abs(),
            self.tau_int,
            self.n_samples,
        )
    }

    pub fn compatible_with(&self, reference: f64, n_sigma: f64) -> bool {
        (self.value - reference).abs() <= n_sigma * self.stderr
    }
}

/// Normalized autocorrelation function ρ(t) for t = 0 … len/4, FFT-based.
pub fn autocorrelation(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 100 {
        return Err(MagicError::Analysis(format!("series too short ({n} < 100)")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut var_check = 0.0;
    for &x in series {
        var_check += (x - mean) * (x - mean);
    }
    if var_check < 1e-300 * n as f64 {
        return Err(MagicError::Analysis("constant series: autocorrelation undefined".into()));
    }

    let max_lag = n / 4;
    let padded = (2 * n).next_power_of_two();
    let mut buf: Vec<FftComplex<f64>> = series
        .iter()
        .map(|&x| FftComplex::new(x - mean, 0.0))
        .chain(std::iter::repeat(FftComplex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(padded);
    let ifft = planner.plan_fft_inverse(padded);
    fft.process(&mut buf);
    for z in buf.iter_mut() {
        *z = FftComplex::new(z.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    // buf[t].re / padded = Σ_i (x_i − m)(x_{i+t} − m)
    let c0 = buf[0].re / padded as f64 / n as f64;
    let mut rho = Vec::with_capacity(max_lag + 1);
    for t in 0..=max_lag {
        let c = buf[t].re / padded as f64 / (n - t) as f64;
        rho.push(c / c0);
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TauEstimate {
    pub tau_int: f64,
    pub window: usize,
    /// True if the automatic window never closed and the lag cap was used.
    pub capped: bool,
}

/// Integrated autocorrelation time `τ = 1 + 2 Σ ρ(t)` with automatic
/// windowing: the smallest W with `W ≥ c·τ(W)`, c = 5.
pub fn integrated_autocorrelation(series: &[f64]) -> Result<TauEstimate> {
    let rho = autocorrelation(series)?;
    Ok(tau_from_rho(&rho))
}

pub(crate) fn tau_from_rho(rho: &[f64]) -> TauEstimate {
    const C: f64 = 5.0;
    let mut tau = 1.0;
    for w in 1..rho.len() {
        tau += 2.0 * rho[w];
        if (w as f64) >= C * tau.max(1.0) {
            return TauEstimate { tau_int: tau.max(1.0), window: w, capped: false };
        }
    }
    TauEstimate { tau_int: tau.max(1.0), window: rho.len().saturating_sub(1), capped: true }
}

/// Mean with the τ-corrected standard error.
pub fn mean_with_error(series: &[f64]) -> Result<EstimatorResult> {
    let n = series.len();
    if n == 0 {
        return Err(MagicError::Analysis("empty series".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>()
        / (n as f64 - 1.0).max(1.0);
    let tau = if n >= 100 && var > 0.0 {
        integrated_autocorrelation(series)?.tau_int
    } else {
        1.0
    };
    let stderr = (var * tau / n as f64).sqrt();
    Ok(EstimatorResult::from_value(mean, stderr, tau, n))
}

/// `scale · log(mean(series))` with a delta-method error; fails when the
/// noisy mean is non-positive (the documented exponential-variance regime).
pub fn log_mean_with_error(series: &[f64], scale: f64) -> Result<EstimatorResult> {
    let mean = mean_with_error(series)?;
    if mean.value <= 0.0 {
        return Err(MagicError::Estimator(format!(
            "mean of log-argument is non-positive ({:.3e}); more samples needed",
            mean.value
        )));
    }
    let value = scale * mean.value.ln();
    let stderr = scale.abs() * mean.stderr / mean.value;
    Ok(EstimatorResult::from_value(value, stderr, mean.tau_int, mean.n_samples))
}

/// Standard error of the mean for increasing bin sizes (powers of two).
/// For well-sampled series the curve plateaus at the τ-corrected error.
pub fn binned_errors(series: &[f64]) -> Vec<(usize, f64)> {
    let n = series.len();
    let mut out = Vec::new();
    let mut bin = 1usize;
    while n / bin >= 8 {
        let nb = n / bin;
        let means: Vec<f64> = (0..nb)
            .map(|k| series[k * bin..(k + 1) * bin].iter().sum::<f64>() / bin as f64)
            .collect();
        let m = means.iter().sum::<f64>() / nb as f64;
        let var = means.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (nb as f64 - 1.0);
        out.push((bin, (var / nb as f64).sqrt()));
        bin *= 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
        // Box–Muller
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn ar1(rng: &mut ChaCha12Rng, phi: f64, n: usize) -> Vec<f64> {
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + gaussian(rng);
                x
            })
            .collect()
    }

    #[test]
    fn iid_noise_has_no_autocorrelation() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let series: Vec<f64> = (0..20_000).map(|_| gaussian(&mut rng)).collect();
        let rho = autocorrelation(&series).unwrap();
        assert!((rho[0] - 1.0).abs() < 1e-12);
        let band = 2.0 / (series.len() as f64).sqrt();
        for t in 1..20 {
            assert!(rho[t].abs() < 3.0 * band, "rho[{t}] = {}", rho[t]);
        }
        let tau = integrated_autocorrelation(&series).unwrap();
        assert!((tau.tau_int - 1.0).abs() < 0.1, "tau = {}", tau.tau_int);
    }

    #[test]
    fn ar1_autocorrelation_is_geometric() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let phi = 0.9f64;
        let series = ar1(&mut rng, phi, 400_000);
        let rho = autocorrelation(&series).unwrap();
        for t in [1usize, 3, 6, 10] {
            assert!(
                (rho[t] - phi.powi(t as i32)).abs() < 0.02,
                "rho[{t}] = {} vs {}",
                rho[t],
                phi.powi(t as i32)
            );
        }
        // τ = (1+φ)/(1−φ) = 19 within 15%
        let tau = integrated_autocorrelation(&series).unwrap();
        let expect = (1.0 + phi) / (1.0 - phi);
        assert!(
            (tau.tau_int - expect).abs() < 0.15 * expect,
            "tau = {} vs {}",
            tau.tau_int,
            expect
        );
        assert!(!tau.capped);
    }

    #[test]
    fn alternating_series_rho1_is_minus_one() {
        let series: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let rho = autocorrelation(&series).unwrap();
        assert!((rho[1] + 1.0).abs() < 1e-9, "rho[1] = {}", rho[1]);
    }

    #[test]
    fn duplicated_series_doubles_tau() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..50_000).map(|_| gaussian(&mut rng)).collect();
        let dup: Vec<f64> = base.iter().flat_map(|&x| [x, x]).collect();
        let tau_base = integrated_autocorrelation(&base).unwrap().tau_int;
        let tau_dup = integrated_autocorrelation(&dup).unwrap().tau_int;
        assert!(
            (tau_dup - 2.0 * tau_base).abs() < 0.25,
            "tau {} vs doubled {}",
            tau_dup,
            2.0 * tau_base
        );
    }

    #[test]
    fn constant_series_is_flagged() {
        let series = vec![1.0; 500];
        assert!(autocorrelation(&series).is_err());
    }

    #[test]
    fn binning_plateau_matches_tau_corrected_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let series = ar1(&mut rng, 0.8, 200_000);
        let est = mean_with_error(&series).unwrap();
        let bins = binned_errors(&series);
        // plateau: largest-bin estimates agree with the τ-corrected error
        let plateau = bins[bins.len() - 3].1;
        let ratio = plateau / est.stderr;
        assert!((0.75..1.35).contains(&ratio), "ratio {ratio}");
        // and the naive (bin = 1) error underestimates
        assert!(bins[0].1 < 0.6 * est.stderr);
    }

    #[test]
    fn stderr_never_below_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for phi in [0.0, 0.5, 0.9] {
            let series = ar1(&mut rng, phi, 30_000);
            let est = mean_with_error(&series).unwrap();
            let n = series.len() as f64;
            let var =
                series.iter().map(|&x| (x - est.value) * (x - est.value)).sum::<f64>() / (n - 1.0);
            let naive = (var / n).sqrt();
            assert!(est.stderr >= naive * 0.999);
            assert!(est.ci95.0 < est.value && est.value < est.ci95.1);
        }
    }

    #[test]
    fn log_mean_delta_method() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let series: Vec<f64> =
            (0..10_000).map(|_| (gaussian(&mut rng) * 0.01 + 1.0).max(0.1)).collect();
        let est = log_mean_with_error(&series, -1.0).unwrap();
        // -log(mean ≈ 1) ≈ 0 with a small error
        assert!(est.value.abs() < 0.01);
        assert!(est.stderr < 0.001);
        // degenerate mean
        let bad = vec![-1.0; 200];
        assert!(log_mean_with_error(&bad, -1.0).is_err());
    }
}
