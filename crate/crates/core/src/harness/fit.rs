//! Least-squares rate fits in log-log coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-positive or non-finite value in fit data: ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("all ε values coincide")]
    Degenerate,
}

/// Ordinary least squares of ln e on ln ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Best constant C for e ≈ C ε |ln ε|^a in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub a: f64,
    pub c: f64,
    /// Sum of squared log residuals.
    pub residual_sum: f64,
}

impl LogFit {
    pub fn predict(&self, eps: f64) -> f64 {
        self.c * log_model(eps, self.a)
    }

    /// Log residuals ln e − ln(model) at the given points.
    pub fn residuals(&self, points: &[(f64, f64)]) -> Vec<f64> {
        points.iter().map(|&(eps, e)| e.ln() - self.predict(eps).ln()).collect()
    }
}

fn log_model(eps: f64, a: f64) -> f64 {
    eps * eps.ln().abs().powf(a)
}

fn check(points: &[(f64, f64)], need: usize) -> Result<(), FitError> {
    if points.len() < need {
        return Err(FitError::TooFewPoints { need, got: points.len() });
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(FitError::NonPositive(x, y));
        }
    }
    Ok(())
}

pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit, FitError> {
    check(points, 3)?;
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit { slope, intercept, r2 })
}

pub fn fit_log_model(points: &[(f64, f64)], a: f64) -> Result<LogFit, FitError> {
    check(points, 1)?;
    let n = points.len() as f64;
    let ln_c = points.iter().map(|&(eps, e)| e.ln() - log_model(eps, a).ln()).sum::<f64>() / n;
    let mut fit = LogFit { a, c: ln_c.exp(), residual_sum: 0.0 };
    fit.residual_sum = fit.residuals(points).iter().map(|r| r * r).sum();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LADDER: [f64; 3] = [0.125, 0.0625, 0.03125];

    fn data(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        LADDER.iter().map(|&e| (e, f(e))).collect()
    }

    #[test]
    fn exact_power_laws() {
        let f = fit_slope(&data(|e| e)).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-14 && (f.r2 - 1.0).abs() < 1e-14);
        assert!((fit_slope(&data(|e| e * e)).unwrap().slope - 2.0).abs() < 1e-14);
        let s = fit_slope(&data(|e| 3.0 * e * e.ln().abs().sqrt())).unwrap().slope;
        assert!(s > 0.8 && s < 1.0, "{s}");
    }

    #[test]
    fn log_models() {
        let pts = data(|e| 2.0 * e * e.ln().abs().powf(1.5));
        let f = fit_log_model(&pts, 1.5).unwrap();
        assert!((f.c - 2.0).abs() < 1e-12 && f.residual_sum < 1e-24);
        let half = data(|e| e * e.ln().abs().sqrt());
        assert!(fit_log_model(&half, 0.5).unwrap().residual_sum < fit_log_model(&half, 0.0).unwrap().residual_sum);
    }

    #[test]
    fn rejects_bad_data() {
        assert_eq!(fit_slope(&[(0.1, 1.0), (0.2, 2.0)]), Err(FitError::TooFewPoints { need: 3, got: 2 }));
        assert!(matches!(fit_slope(&data(|e| e - 0.0625)), Err(FitError::NonPositive(..))));
    }
}
