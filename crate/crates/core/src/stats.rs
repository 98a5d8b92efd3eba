//! Small-sample statistics for the Monte Carlo checks.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation / √n).
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.se, self.mean + Z95 * self.se)
    }
}

/// Mean and standard error, summed in input order.
pub fn mean_se(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanEstimate { mean, se, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: usize,
    pub n: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Wilson score interval at 95%.
pub fn wilson(successes: usize, n: usize) -> Proportion {
    if n == 0 {
        return Proportion {
            successes,
            n,
            estimate: f64::NAN,
            lower: 0.0,
            upper: 1.0,
        };
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Proportion {
        successes,
        n,
        estimate: p,
        // the bounds are exactly 0 and 1 at the extremes
        lower: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        upper: if successes == n { 1.0 } else { (centre + half).min(1.0) },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`; `None` with fewer than
/// two points or constant `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterceptFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the intercept propagated from per-point standard
    /// errors of `y` (the `x` values are treated as exact).
    pub intercept_se: f64,
}

/// OLS fit with the intercept's standard error propagated from independent
/// per-point errors `y_se`.
pub fn fit_with_errors(x: &[f64], y: &[f64], y_se: &[f64]) -> Option<InterceptFit> {
    let fit = linear_fit(x, y)?;
    if y_se.len() != x.len() {
        return None;
    }
    let nf = x.len() as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    // intercept = Σ c_i y_i with c_i = 1/n − mx (x_i − mx)/sxx
    let var: f64 = x
        .iter()
        .zip(y_se)
        .map(|(xi, s)| {
            let c = 1.0 / nf - mx * (xi - mx) / sxx;
            c * c * s * s
        })
        .sum();
    Some(InterceptFit {
        slope: fit.slope,
        intercept: fit.intercept,
        intercept_se: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_se() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample variance 5/3
        assert_relative_eq!(m.se, (5.0f64 / 3.0 / 4.0).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn wilson_reference_values() {
        // 0 of 200: upper = z²/(n + z²)
        let w = wilson(0, 200);
        assert_eq!(w.lower, 0.0);
        assert_relative_eq!(w.upper, Z95 * Z95 / (200.0 + Z95 * Z95), max_relative = 1e-12);
        let w = wilson(10, 100);
        assert_relative_eq!(w.lower, 0.05522, epsilon = 1e-4);
        assert_relative_eq!(w.upper, 0.17437, epsilon = 1e-4);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(f.slope, -0.5, max_relative = 1e-15);
        assert_relative_eq!(f.intercept, 2.0, max_relative = 1e-15);
        assert_relative_eq!(f.r_squared, 1.0, max_relative = 1e-15);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn intercept_error_two_points() {
        // two points: intercept = (x2 y1 − x1 y2)/(x2 − x1)
        let f = fit_with_errors(&[1.0, 3.0], &[1.0, 2.0], &[0.1, 0.2]).unwrap();
        assert_relative_eq!(f.intercept, 0.5, max_relative = 1e-14);
        let expect = ((1.5f64 * 0.1).powi(2) + (0.5f64 * 0.2).powi(2)).sqrt();
        assert_relative_eq!(f.intercept_se, expect, max_relative = 1e-14);
    }
}
