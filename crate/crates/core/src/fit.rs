//! Ordinary least squares on log-log axes.

use crate::error::{Error, Result};

/// Result of fitting `y ≈ prefactor · (offset + t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a power law through the strictly positive samples of `y`.
///
/// Non-positive samples carry no log-log information and are skipped; at
/// least two positive samples at distinct abscissae are required.
pub fn fit_power_law(t: &[f64], y: &[f64], offset: f64) -> Result<PowerLawFit> {
    if t.len() != y.len() {
        return Err(Error::Shape {
            what: "power-law fit samples",
            expected: t.len(),
            got: y.len(),
        });
    }
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&s, &v)| ((offset + s).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Parameter(format!(
            "power-law fit needs at least two positive samples, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::Parameter(
            "power-law fit needs distinct abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    Ok(PowerLawFit {
        exponent: slope,
        prefactor: intercept.exp(),
        r_squared,
        points: pts.len(),
    })
}

/// `n` log-spaced points covering `[start, end]` inclusive.
pub fn log_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    assert!(start > 0.0 && end > start && n >= 2);
    let (a, b) = (start.ln(), end.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `n` uniformly spaced points covering `[start, end]` inclusive.
pub fn linear_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
