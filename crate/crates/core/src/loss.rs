//! Convex margin losses and the pointwise minimizer `t*(eta)` of
//! `Q(eta, t) = eta l(t) + (1 - eta) l(-t)`, taken in the infimum convention.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::simplex_inner;

/// Margin losses written as `l(t)`, so a pair with reduced label `tau` and
/// score `d` pays `l(tau d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFunction {
    /// `(1 + t)_+`
    Hinge,
    /// `ln(1 + e^t)`
    Logistic,
    /// `e^t`
    Exponential,
    /// `(1 + t)_+^2`
    ModifiedLeastSquares,
}

/// Which representative the hinge minimizer takes at `eta = 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeConvention {
    /// `sgn(1 - 2 eta)` with `sgn(0) = 0`.
    ZeroAtHalf,
    /// Smallest minimizer: `-1` at `eta = 1/2`.
    Infimum,
}

impl LossFunction {
    pub const ALL: [LossFunction; 4] = [Self::Hinge, Self::Logistic, Self::Exponential, Self::ModifiedLeastSquares];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hinge => "hinge",
            Self::Logistic => "logistic",
            Self::Exponential => "exponential",
            Self::ModifiedLeastSquares => "modified_least_squares",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::Parameter(format!("unknown loss '{name}'")))
    }

    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Self::Hinge => (1.0 + t).max(0.0),
            Self::Logistic => t.max(0.0) + (-t.abs()).exp().ln_1p(),
            Self::Exponential => t.exp(),
            Self::ModifiedLeastSquares => {
                let h = (1.0 + t).max(0.0);
                h * h
            }
        }
    }

    /// Derivative of `l`, taking 0 at the hinge kink.
    #[inline]
    pub fn subgradient(self, t: f64) -> f64 {
        match self {
            Self::Hinge => {
                if 1.0 + t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Logistic => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            Self::Exponential => t.exp(),
            Self::ModifiedLeastSquares => 2.0 * (1.0 + t).max(0.0),
        }
    }

    pub fn is_convex(self) -> bool {
        true
    }

    pub fn is_non_decreasing(self) -> bool {
        true
    }

    pub fn is_non_negative(self) -> bool {
        true
    }

    /// Closed-form `t*(eta)`. Unbounded minimizers map to `+-inf`.
    pub fn tstar_analytic(self, eta: f64, convention: HingeConvention) -> Result<Option<f64>> {
        check_eta(eta)?;
        let v = match self {
            Self::Hinge => match convention {
                HingeConvention::ZeroAtHalf => crate::synthetic::hinge_true_metric(eta),
                HingeConvention::Infimum => crate::synthetic::hinge_true_metric_infimum(eta),
            },
            Self::Logistic => log_odds_against(eta),
            Self::Exponential => 0.5 * log_odds_against(eta),
            Self::ModifiedLeastSquares => 1.0 - 2.0 * eta,
        };
        Ok(Some(v))
    }

    /// Non-negativity, monotonicity and midpoint convexity on a probe grid.
    pub fn check_assumptions(self, probe: &[f64]) -> Vec<String> {
        let mut failures = Vec::new();
        let mut sorted = probe.to_vec();
        sorted.sort_by(f64::total_cmp);
        for w in sorted.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (la, lb) = (self.eval(a), self.eval(b));
            if la < 0.0 {
                failures.push(format!("{}: l({a}) = {la} < 0", self.name()));
            }
            if lb < la {
                failures.push(format!("{}: l decreases between {a} and {b}", self.name()));
            }
            let mid = self.eval(0.5 * (a + b));
            if mid > 0.5 * (la + lb) * (1.0 + 1e-12) + 1e-15 {
                failures.push(format!("{}: midpoint convexity fails on [{a}, {b}]", self.name()));
            }
        }
        failures
    }
}

fn log_odds_against(eta: f64) -> f64 {
    if eta == 0.0 {
        f64::INFINITY
    } else if eta == 1.0 {
        f64::NEG_INFINITY
    } else {
        ((1.0 - eta) / eta).ln()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("eta must lie in [0, 1], got {eta}")))
    }
}

/// `Q(eta, t) = eta l(t) + (1 - eta) l(-t)`.
pub fn q_value(loss: LossFunction, eta: f64, t: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(q_unchecked(loss, eta, t))
}

#[inline]
fn q_unchecked(loss: LossFunction, eta: f64, t: f64) -> f64 {
    eta * loss.eval(t) + (1.0 - eta) * loss.eval(-t)
}

/// Search range and step of the grid minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Step of the local pass around the coarse winner.
    pub refine_step: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self { lo: -20.0, hi: 20.0, step: 1e-4, refine_step: 1e-6 }
    }
}

impl OracleGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let grid = Self { lo, hi, step, refine_step: step.min(1e-6) };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.refine_step > 0.0 && self.refine_step <= self.step) {
            return Err(Error::Parameter("grid steps must be positive with refine_step <= step".into()));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi - self.lo >= 2.0 * self.step) {
            return Err(Error::Parameter(format!("bad search range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Agreement tolerance between the oracle and a closed form.
    pub fn tolerance(&self) -> f64 {
        2.0 * self.refine_step
    }
}

/// Result of the grid minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimizer {
    pub tstar: f64,
    pub q_min: f64,
}

// Values within this of the minimum count as minimal. A fixed 1e-12 is too
// loose on flat minima (logistic near eta = 0.01 shifts by ~1e-5).
#[inline]
fn plateau_tolerance(q_min: f64) -> f64 {
    8.0 * f64::EPSILON * q_min.abs().max(1.0)
}

/// Infimum of the grid argmin of `f` over `grid`, refined once.
pub fn grid_infimum<F: Fn(f64) -> f64>(f: F, grid: &OracleGrid) -> Result<Minimizer> {
    grid.validate()?;
    let count = ((grid.hi - grid.lo) / grid.step).round() as usize;
    let at = |i: usize| if i == count { grid.hi } else { grid.lo + i as f64 * grid.step };

    let values: Vec<f64> = (0..=count).map(|i| f(at(i))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("objective is not finite on the search grid".into()));
    }
    let q_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = plateau_tolerance(q_min);
    let winner = values.iter().position(|v| *v <= q_min + tol).expect("non-empty grid");
    if winner == 0 {
        return Err(Error::RangeTooSmall { lo: grid.lo, hi: grid.hi, at_lower: true });
    }
    // Still decreasing at a minimal top end: the minimizer set lies beyond the range.
    if values[count] < values[count - 1] && values[count] <= q_min + tol {
        return Err(Error::RangeTooSmall { lo: grid.lo, hi: grid.hi, at_lower: false });
    }

    let left = at(winner) - grid.step;
    let right = if winner == count { grid.hi } else { at(winner) + grid.step };
    let fine = ((right - left) / grid.refine_step).round() as usize;
    let fine_at = |i: usize| left + i as f64 * grid.refine_step;
    let fine_values: Vec<f64> = (0..=fine).map(|i| f(fine_at(i))).collect();
    let fine_min = fine_values.iter().copied().fold(q_min, f64::min);
    let fine_tol = plateau_tolerance(fine_min);
    let pos = fine_values.iter().position(|v| *v <= fine_min + fine_tol);
    match pos {
        Some(i) => Ok(Minimizer { tstar: fine_at(i), q_min: fine_min }),
        // The coarse point itself is the smallest minimal value.
        None => Ok(Minimizer { tstar: at(winner), q_min }),
    }
}

/// Smallest minimizer of `Q(eta, .)` found on `grid`.
pub fn tstar_oracle(loss: LossFunction, eta: f64, grid: &OracleGrid) -> Result<f64> {
    Ok(minimize_q(loss, eta, grid)?.tstar)
}

pub fn minimize_q(loss: LossFunction, eta: f64, grid: &OracleGrid) -> Result<Minimizer> {
    check_eta(eta)?;
    grid_infimum(|t| q_unchecked(loss, eta, t), grid)
}

/// Maps range-boundary hits to `-inf` (lower) or `+inf` (upper).
pub fn tstar_or_sentinel(loss: LossFunction, eta: f64, grid: &OracleGrid) -> Result<f64> {
    match tstar_oracle(loss, eta, grid) {
        Err(Error::RangeTooSmall { at_lower, .. }) => Ok(if at_lower { f64::NEG_INFINITY } else { f64::INFINITY }),
        other => other,
    }
}

/// `t*` along a sorted `eta` grid with the monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerProfile {
    pub loss: LossFunction,
    pub eta_grid: Vec<f64>,
    pub tstar: Vec<f64>,
    pub tstar_analytic: Vec<Option<f64>>,
    pub q_min: Vec<f64>,
    pub grid: OracleGrid,
    /// Indices `i` with `tstar[i + 1] > tstar[i] + tolerance`.
    pub violations: Vec<usize>,
}

impl MinimizerProfile {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    /// Largest `|oracle - analytic|` over points with a finite closed form.
    pub fn max_analytic_gap(&self) -> f64 {
        self.tstar
            .iter()
            .zip(&self.tstar_analytic)
            .filter_map(|(o, a)| a.filter(|v| v.is_finite()).map(|a| (o - a).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn check_monotone(loss: LossFunction, eta_grid: &[f64], grid: &OracleGrid) -> Result<MinimizerProfile> {
    if eta_grid.is_empty() {
        return Err(Error::Parameter("eta grid is empty".into()));
    }
    if eta_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("eta grid must be sorted".into()));
    }
    let solved: Vec<Minimizer> = eta_grid.par_iter().map(|&eta| minimize_q(loss, eta, grid)).collect::<Result<_>>()?;
    let tstar: Vec<f64> = solved.iter().map(|m| m.tstar).collect();
    let tstar_analytic = eta_grid
        .iter()
        .map(|&eta| loss.tstar_analytic(eta, HingeConvention::Infimum))
        .collect::<Result<Vec<_>>>()?;
    let tol = grid.tolerance();
    let violations = (0..tstar.len().saturating_sub(1)).filter(|&i| tstar[i + 1] > tstar[i] + tol).collect();
    Ok(MinimizerProfile {
        loss,
        eta_grid: eta_grid.to_vec(),
        tstar,
        tstar_analytic,
        q_min: solved.iter().map(|m| m.q_min).collect(),
        grid: *grid,
        violations,
    })
}

/// Self-distance comparison for one pair of conditional laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfDistanceReport {
    pub eta_cross: f64,
    pub eta_self_x: f64,
    pub eta_self_x_prime: f64,
    pub d_cross: f64,
    pub d_self_x: f64,
    pub d_self_x_prime: f64,
    /// `eta(x, x') <= min(eta(x, x), eta(x', x'))`.
    pub precondition: bool,
    /// `max(d(x, x), d(x', x')) <= d(x, x')`.
    pub conclusion: bool,
}

impl SelfDistanceReport {
    /// Precondition holds but the conclusion does not.
    pub fn is_violation(&self) -> bool {
        self.precondition && !self.conclusion
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!("{p:?} is not a probability vector")));
    }
    Ok(())
}

pub fn check_self_distance(loss: LossFunction, p_x: &[f64], p_x_prime: &[f64], grid: &OracleGrid) -> Result<SelfDistanceReport> {
    check_simplex(p_x)?;
    check_simplex(p_x_prime)?;
    if p_x.len() != p_x_prime.len() {
        return Err(Error::Shape { expected: p_x.len(), got: p_x_prime.len() });
    }
    let eta_cross = simplex_inner(p_x, p_x_prime);
    let eta_self_x = simplex_inner(p_x, p_x);
    let eta_self_x_prime = simplex_inner(p_x_prime, p_x_prime);
    let d_cross = tstar_or_sentinel(loss, eta_cross, grid)?;
    let d_self_x = tstar_or_sentinel(loss, eta_self_x, grid)?;
    let d_self_x_prime = tstar_or_sentinel(loss, eta_self_x_prime, grid)?;
    let tol = grid.tolerance();
    Ok(SelfDistanceReport {
        eta_cross,
        eta_self_x,
        eta_self_x_prime,
        d_cross,
        d_self_x,
        d_self_x_prime,
        precondition: eta_cross <= eta_self_x.min(eta_self_x_prime),
        conclusion: d_self_x.max(d_self_x_prime) <= d_cross + tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasShiftReport {
    pub shifted_tstar: f64,
    pub unshifted_tstar: f64,
    pub bias: f64,
    /// `|shifted - (bias + unshifted)|`.
    pub gap: f64,
    pub holds: bool,
}

/// Minimizes `eta l(t - b) + (1 - eta) l(b - t)` and compares with `b + t*(eta)`.
pub fn check_bias_shift(loss: LossFunction, eta: f64, bias: f64, grid: &OracleGrid) -> Result<BiasShiftReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Parameter(format!("eta must lie in (0, 1), got {eta}")));
    }
    if !bias.is_finite() {
        return Err(Error::Parameter("bias must be finite".into()));
    }
    let unshifted_tstar = tstar_oracle(loss, eta, grid)?;
    let shifted_tstar = grid_infimum(|t| eta * loss.eval(t - bias) + (1.0 - eta) * loss.eval(bias - t), grid)?.tstar;
    let gap = (shifted_tstar - (bias + unshifted_tstar)).abs();
    Ok(BiasShiftReport { shifted_tstar, unshifted_tstar, bias, gap, holds: gap <= grid.tolerance() })
}

/// The constant true metric under continuously distributed labels,
/// `argmin_t l(-t)` in the infimum convention (`+inf` if unbounded).
pub fn continuous_label_degeneracy(loss: LossFunction, grid: &OracleGrid) -> Result<f64> {
    tstar_or_sentinel(loss, 0.0, grid)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}
