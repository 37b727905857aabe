//! Least-squares power-law fits on log-log axes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Exponent `α` in `y ≈ e^β x^α`.
    pub slope: f64,
    pub intercept: f64,
    /// OLS standard error of the slope (zero for an exact fit).
    pub stderr: f64,
}

fn logs(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: x.len(),
        });
    }
    for (&xi, &yi) in x.iter().zip(y) {
        if !(xi > 0.0) {
            return Err(Error::NonPositive { at: xi, value: xi });
        }
        if !(yi > 0.0) {
            return Err(Error::NonPositive { at: xi, value: yi });
        }
    }
    Ok((x.iter().map(|v| v.ln()).collect(), y.iter().map(|v| v.ln()).collect()))
}

fn ols(lx: &[f64], ly: &[f64]) -> PowerLawFit {
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let stderr = if n > 2.0 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    PowerLawFit {
        slope,
        intercept,
        stderr,
    }
}

/// Fits `ln y = β + α ln x`. Needs at least three points, all positive.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    let (lx, ly) = logs(x, y)?;
    Ok(ols(&lx, &ly))
}

/// Slope standard error from resampling each cell's replicates with
/// replacement and refitting the cell means.
pub fn bootstrap_slope_stderr(x: &[f64], samples: &[Vec<f64>], resamples: usize, seed: u64) -> Result<f64> {
    check_dim(x.len(), samples.len())?;
    let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
    fit_power_law(x, &means)?;
    let mut r = rng::stream(seed);
    let mut slopes = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let boot: Vec<f64> = samples
            .iter()
            .map(|s| (0..s.len()).map(|_| s[r.random_range(0..s.len())]).sum::<f64>() / s.len() as f64)
            .collect();
        if let Ok(f) = fit_power_law(x, &boot) {
            slopes.push(f.slope);
        }
    }
    Ok(std_dev(&slopes))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn std_err(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    std_dev(v) / (v.len() as f64).sqrt()
}
