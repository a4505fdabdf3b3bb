//! Ordinary least squares on a line, with Student-t confidence bounds.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `NaN` when fewer than three points were fitted.
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Residual degrees of freedom, `n - 2`.
    pub dof: usize,
}

impl LinearFit {
    pub fn ols(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Shape { expected: xs.len(), got: ys.len() });
        }
        let n = xs.len();
        if n < 2 {
            return Err(Error::DegenerateFit(format!("need at least two points, got {n}")));
        }
        let nf = n as f64;
        let mx = xs.iter().sum::<f64>() / nf;
        let my = ys.iter().sum::<f64>() / nf;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx <= 0.0 {
            return Err(Error::DegenerateFit("all abscissae coincide".into()));
        }
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - (intercept + slope * x)).collect();
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
        let dof = n - 2;
        let (slope_stderr, intercept_stderr) = if dof == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let sigma2 = sse / dof as f64;
            let sx2: f64 = xs.iter().map(|x| x * x).sum();
            ((sigma2 / sxx).sqrt(), (sigma2 * sx2 / (nf * sxx)).sqrt())
        };
        Ok(Self { slope, intercept, slope_stderr, intercept_stderr, r_squared, residuals, dof })
    }

    /// One-sided upper confidence bound on the slope at level `confidence`.
    pub fn slope_upper(&self, confidence: f64) -> f64 {
        self.slope + student_t_quantile(confidence, self.dof) * self.slope_stderr
    }

    /// One-sided lower confidence bound on the slope at level `confidence`.
    pub fn slope_lower(&self, confidence: f64) -> f64 {
        self.slope - student_t_quantile(confidence, self.dof) * self.slope_stderr
    }

    pub fn intercept_upper(&self, confidence: f64) -> f64 {
        self.intercept + student_t_quantile(confidence, self.dof) * self.intercept_stderr
    }
}

/// Quantile of Student's t with `dof` degrees of freedom (`NaN` for `dof == 0`).
pub fn student_t_quantile(p: f64, dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map(|t| t.inverse_cdf(p)).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = LinearFit::ols(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!(fit.slope_stderr < 1e-12);
        assert_eq!(fit.dof, 2);
    }

    #[test]
    fn stderr_matches_textbook() {
        // y = (1, 3, 2, 5), x = (1, 2, 3, 4): slope 1.1, se = sqrt(SSE/2 / 5)
        let fit = LinearFit::ols(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 5.0]).unwrap();
        assert!((fit.slope - 1.1).abs() < 1e-12);
        let sse: f64 = fit.residuals.iter().map(|r| r * r).sum();
        assert!((fit.slope_stderr - (sse / 2.0 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn t_quantiles() {
        assert!((student_t_quantile(0.95, 3) - 2.353363).abs() < 1e-5);
        assert!((student_t_quantile(0.975, 10) - 2.228139).abs() < 1e-5);
        assert!(student_t_quantile(0.95, 0).is_nan());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(LinearFit::ols(&[1.0], &[1.0]).is_err());
        assert!(LinearFit::ols(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
