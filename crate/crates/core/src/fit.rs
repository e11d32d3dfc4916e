//! Least-squares power-law fits on log-log data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `y = intercept + slope * x` fitted by ordinary least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual `|model - data|`.
    pub max_residual: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return invalid("fit inputs differ in length");
    }
    if xs.len() < 3 {
        return invalid(format!("fit needs at least 3 points, got {}", xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return invalid("fit inputs must be finite");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("fit abscissae are all equal");
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (intercept + slope * x - y).abs())
        .fold(0.0, f64::max);
    Ok(LineFit { slope, intercept, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 0.5).abs() < 1e-14);
        assert!(f.max_residual < 1e-14);
    }

    #[test]
    fn refuses_short_windows() {
        assert!(fit_line(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }
}
