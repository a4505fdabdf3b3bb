//! Synthetic tasks on `[0, 1]^p` whose conditional label law is known in
//! closed form, so `eta(x, x') = <P_x, P_x'>`, the hinge true metric and the
//! Bayes risk are all exact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{student_t_quantile, LinearFit};
use crate::mc::{sharded_means, MeanEstimate};

const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Two-label family `p_1(x) = 1/2 + A prod_j cos(2 pi k x_j)`.
///
/// Every partial derivative of order `j` is bounded by `A (2 pi k)^j`, so the
/// constructor can certify the `W^{r,inf}` norm analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineProduct {
    pub input_dim: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub smoothness: u32,
}

impl CosineProduct {
    pub fn new(input_dim: usize, amplitude: f64, frequency: f64, smoothness: u32) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("input dimension must be at least 1".into()));
        }
        if !(amplitude >= 0.0 && amplitude <= 0.5) {
            return Err(Error::Parameter(format!("amplitude must lie in [0, 1/2], got {amplitude}")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::Parameter(format!("frequency must be positive, got {frequency}")));
        }
        let model = Self { input_dim, amplitude, frequency, smoothness };
        let worst = model.max_derivative_bound();
        if worst > 0.5 + 1e-15 {
            return Err(Error::Parameter(format!(
                "A (2 pi k)^j = {worst} exceeds 1/2 for some order j <= r = {smoothness}"
            )));
        }
        Ok(model)
    }

    /// Largest possible amplitude for the given frequency and smoothness.
    pub fn max_amplitude(frequency: f64, smoothness: u32) -> f64 {
        let w = 2.0 * std::f64::consts::PI * frequency;
        (1..=smoothness).map(|j| 0.5 / w.powi(j as i32)).fold(0.5, f64::min)
    }

    fn max_derivative_bound(&self) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        (1..=self.smoothness).map(|j| self.amplitude * w.powi(j as i32)).fold(0.0, f64::max)
    }

    /// Analytic bound on `max_i ||p_i||_{W^{r,inf}}`.
    pub fn sobolev_bound(&self) -> f64 {
        (0.5 + self.amplitude).max(self.max_derivative_bound())
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let prod: f64 = x.iter().map(|v| (w * v).cos()).product();
        let p1 = 0.5 + self.amplitude * prod;
        out[0] = p1;
        out[1] = 1.0 - p1;
    }
}

/// Linear path between two simplex vectors over `[start, end)` of the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

/// Conditional law that depends on `x_1` only, piecewise linear along a
/// partition of `[0, 1]`. Constant segments have `from == to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub input_dim: usize,
    pub num_labels: usize,
    pub segments: Vec<Segment>,
}

fn check_simplex(v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::Shape { expected: m, got: v.len() });
    }
    if v.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || (v.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Parameter(format!("{v:?} is not a probability vector")));
    }
    Ok(())
}

impl PiecewiseModel {
    pub fn new(input_dim: usize, num_labels: usize, segments: Vec<Segment>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("input dimension must be at least 1".into()));
        }
        if num_labels < 2 {
            return Err(Error::Parameter("at least two labels required".into()));
        }
        if segments.is_empty() {
            return Err(Error::Parameter("at least one segment required".into()));
        }
        let mut cursor = 0.0;
        for seg in &segments {
            if seg.start != cursor || !(seg.end > seg.start) {
                return Err(Error::Parameter("segments must partition [0, 1] in order".into()));
            }
            check_simplex(&seg.from, num_labels)?;
            check_simplex(&seg.to, num_labels)?;
            cursor = seg.end;
        }
        if cursor != 1.0 {
            return Err(Error::Parameter("segments must end at 1".into()));
        }
        Ok(Self { input_dim, num_labels, segments })
    }

    /// `P_x = probs` for every `x`.
    pub fn constant(input_dim: usize, probs: Vec<f64>) -> Result<Self> {
        let m = probs.len();
        Self::new(input_dim, m, vec![Segment { start: 0.0, end: 1.0, from: probs.clone(), to: probs }])
    }

    /// `P_x = below` for `x_1 < split`, `above` otherwise.
    pub fn two_level(input_dim: usize, split: f64, below: Vec<f64>, above: Vec<f64>) -> Result<Self> {
        let m = below.len();
        Self::new(
            input_dim,
            m,
            vec![
                Segment { start: 0.0, end: split, from: below.clone(), to: below },
                Segment { start: split, end: 1.0, from: above.clone(), to: above },
            ],
        )
    }

    /// `P_x` moves linearly from `from` at `x_1 = 0` to `to` at `x_1 = 1`.
    pub fn linear(input_dim: usize, from: Vec<f64>, to: Vec<f64>) -> Result<Self> {
        let m = from.len();
        Self::new(input_dim, m, vec![Segment { start: 0.0, end: 1.0, from, to }])
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let t = x[0];
        let last = self.segments.len() - 1;
        let seg = self.segments.iter().position(|s| t < s.end).unwrap_or(last);
        let seg = &self.segments[seg];
        if seg.from == seg.to {
            out.copy_from_slice(&seg.from);
            return;
        }
        let s = ((t - seg.start) / (seg.end - seg.start)).clamp(0.0, 1.0);
        for ((o, a), b) in out.iter_mut().zip(&seg.from).zip(&seg.to) {
            *o = (1.0 - s) * a + s * b;
        }
    }
}

/// Map `x -> P_x` onto the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionalModel {
    CosineProduct(CosineProduct),
    Piecewise(PiecewiseModel),
}

impl ConditionalModel {
    pub fn num_labels(&self) -> usize {
        match self {
            Self::CosineProduct(_) => 2,
            Self::Piecewise(m) => m.num_labels,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::CosineProduct(m) => m.input_dim,
            Self::Piecewise(m) => m.input_dim,
        }
    }

    /// Smoothness tag `r`; piecewise families are tagged 0.
    pub fn smoothness(&self) -> u32 {
        match self {
            Self::CosineProduct(m) => m.smoothness,
            Self::Piecewise(_) => 0,
        }
    }

    /// Claimed Sobolev budget, `None` when the family carries no smoothness claim.
    pub fn sobolev_budget(&self) -> Option<f64> {
        match self {
            Self::CosineProduct(m) => Some(m.sobolev_bound()),
            Self::Piecewise(_) => None,
        }
    }

    pub fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::CosineProduct(m) => m.probs_into(x, out),
            Self::Piecewise(m) => m.probs_into(x, out),
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_labels()];
        self.probs_into(x, &mut out);
        out
    }
}

/// How labels are drawn given `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelLaw {
    Conditional(ConditionalModel),
    /// Continuously distributed labels: two draws never coincide, so `eta = 0`.
    ContinuousLabels,
}

/// Input law on `[0, 1]^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Marginal {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `(x, x', y, y', tau)` with `tau = +1` iff `y == y'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub y: usize,
    pub y_prime: usize,
    pub tau: i8,
}

/// Reducing function: `+1` on equal labels, `-1` otherwise.
#[inline]
pub fn tau(y: usize, y_prime: usize) -> f64 {
    if y == y_prime {
        1.0
    } else {
        -1.0
    }
}

/// `<p, q>` with compensated products and sums, so simplex vectors with
/// short decimal entries give the correctly rounded value (e.g. exactly
/// `0.44` for `[0.6, 0.2, 0.2]` with itself). Symmetric in its arguments.
pub fn simplex_inner(p: &[f64], q: &[f64]) -> f64 {
    let (mut sum, mut err) = (0.0, 0.0);
    for (&u, &v) in p.iter().zip(q) {
        let (prod, prod_err) = two_product(u, v);
        let (s, e) = two_sum(sum, prod);
        sum = s;
        err += prod_err + e;
    }
    sum + err
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Dekker's exact product; valid for the magnitudes of probabilities.
#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, al * bl - (((p - ah * bh) - al * bh) - ah * bl))
}

/// `sgn(1 - 2 eta)` with `sgn(0) = 0` (symmetric convention for the hinge true metric).
#[inline]
pub fn hinge_true_metric(eta: f64) -> f64 {
    let v = 1.0 - 2.0 * eta;
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Smallest hinge minimizer: `1` below `1/2`, `-1` on `[1/2, 1)`, `-inf` at `eta = 1`.
pub fn hinge_true_metric_infimum(eta: f64) -> f64 {
    if eta < 0.5 {
        1.0
    } else if eta < 1.0 {
        -1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Input dimension, label law, marginal and sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub input_dim: usize,
    pub law: LabelLaw,
    #[serde(default)]
    pub marginal: Marginal,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(law: LabelLaw, input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("input dimension must be at least 1".into()));
        }
        if let LabelLaw::Conditional(model) = &law {
            if model.input_dim() != input_dim {
                return Err(Error::Shape { expected: input_dim, got: model.input_dim() });
            }
        }
        Ok(Self { input_dim, law, marginal: Marginal::Uniform, seed })
    }

    pub fn conditional(model: ConditionalModel, seed: u64) -> Result<Self> {
        let p = model.input_dim();
        Self::new(LabelLaw::Conditional(model), p, seed)
    }

    /// Built-in one-dimensional two-label task: `p_1(x) = 1/2 + A cos(pi x)`
    /// with the largest amplitude allowed for `r = 1`.
    pub fn builtin_1d(seed: u64) -> Self {
        let amplitude = CosineProduct::max_amplitude(0.5, 1);
        let model = CosineProduct::new(1, amplitude, 0.5, 1).expect("valid built-in parameters");
        Self::conditional(ConditionalModel::CosineProduct(model), seed).expect("consistent dimensions")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn num_labels(&self) -> Option<usize> {
        match &self.law {
            LabelLaw::Conditional(m) => Some(m.num_labels()),
            LabelLaw::ContinuousLabels => None,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { expected: self.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("{x:?} lies outside [0, 1]^{}", self.input_dim)));
        }
        Ok(())
    }

    /// `P_x`, or `None` for continuous labels.
    pub fn probs(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_point(x)?;
        Ok(match &self.law {
            LabelLaw::Conditional(m) => Some(m.probs(x)),
            LabelLaw::ContinuousLabels => None,
        })
    }

    /// `eta(x, x') = <P_x, P_x'>`.
    pub fn eta(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x_prime)?;
        Ok(self.eta_unchecked(x, x_prime))
    }

    pub(crate) fn eta_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        match &self.law {
            LabelLaw::Conditional(m) => {
                let a = m.probs(x);
                let b = m.probs(x_prime);
                simplex_inner(&a, &b)
            }
            LabelLaw::ContinuousLabels => 0.0,
        }
    }

    pub fn true_metric_hinge(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        Ok(hinge_true_metric(self.eta(x, x_prime)?))
    }

    pub fn true_metric_hinge_infimum(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        Ok(hinge_true_metric_infimum(self.eta(x, x_prime)?))
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.marginal {
            Marginal::Uniform => (0..self.input_dim).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    fn sample_label<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, fresh: usize) -> usize {
        match &self.law {
            LabelLaw::Conditional(m) => {
                let probs = m.probs(x);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                // u landed in the rounding gap above the cumulative sum
                probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
            }
            LabelLaw::ContinuousLabels => fresh,
        }
    }

    /// `n` i.i.d. draws of `(x, y)` from the task seed.
    pub fn sample_dataset(&self, n: usize) -> Result<Dataset> {
        if n < 2 {
            return Err(Error::Parameter(format!("dataset needs n >= 2, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let samples = (0..n)
            .map(|i| {
                let x = self.sample_x(&mut rng);
                let y = self.sample_label(&x, &mut rng, i);
                Sample { x, y }
            })
            .collect();
        Ok(Dataset { input_dim: self.input_dim, samples })
    }

    /// One independent labelled pair.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> PairSample {
        let x = self.sample_x(rng);
        let y = self.sample_label(&x, rng, 0);
        let x_prime = self.sample_x(rng);
        let y_prime = self.sample_label(&x_prime, rng, 1);
        PairSample { tau: tau(y, y_prime) as i8, x, x_prime, y, y_prime }
    }

    /// Monte Carlo estimate of `E[2 min(eta, 1 - eta)]`, the hinge Bayes risk.
    pub fn bayes_risk_hinge(&self, mc_samples: usize, seed: u64) -> Result<MeanEstimate> {
        if mc_samples < 2 {
            return Err(Error::Parameter("Bayes risk needs at least 2 Monte Carlo samples".into()));
        }
        let [est] = sharded_means(mc_samples, seed, |rng| {
            let x = self.sample_x(rng);
            let xp = self.sample_x(rng);
            let eta = self.eta_unchecked(&x, &xp);
            [2.0 * eta.min(1.0 - eta)]
        });
        Ok(est)
    }

    /// Fits `Prob{|eta - 1/2| <= t} ~ C t^theta` over `t_grid`.
    pub fn estimate_noise_exponent(&self, mc_pairs: usize, t_grid: &[f64], seed: u64) -> Result<NoiseFit> {
        estimate_noise_exponent(self, mc_pairs, t_grid, seed)
    }
}

/// One grid point of the noise-mass curve.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePoint {
    pub t: f64,
    pub mass: f64,
    pub mass_stderr: f64,
    /// Residual of the log-log fit; `None` if the point was excluded (mass 0 or 1).
    pub residual: Option<f64>,
}

/// Fitted noise exponent with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFit {
    pub theta: f64,
    pub c_theta: f64,
    /// `NaN` when only two points were usable.
    pub theta_stderr: f64,
    pub r_squared: f64,
    /// One-sided 95% lower confidence value of `theta`.
    pub theta_conservative: f64,
    /// Smallest `C` with `F(t) + 2 se <= C t^theta_conservative` on every grid point.
    pub c_theta_conservative: f64,
    pub points: Vec<NoisePoint>,
    pub mc_pairs: usize,
}

pub const NOISE_CONFIDENCE: f64 = 0.95;

pub fn estimate_noise_exponent(task: &SyntheticTask, mc_pairs: usize, t_grid: &[f64], seed: u64) -> Result<NoiseFit> {
    if t_grid.len() < 4 {
        return Err(Error::Parameter("noise fit needs at least 4 grid points".into()));
    }
    if t_grid.iter().any(|t| !(*t > 0.0 && *t < 0.5)) {
        return Err(Error::Parameter("noise grid values must lie in (0, 1/2)".into()));
    }
    if mc_pairs < 10_000 {
        return Err(Error::Parameter("noise fit needs at least 10^4 Monte Carlo pairs".into()));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);

    // Indicators for all grid points share one pair stream.
    const MAX_GRID: usize = 32;
    if grid.len() > MAX_GRID {
        return Err(Error::Parameter(format!("noise grid limited to {MAX_GRID} points")));
    }
    let estimates = sharded_means::<MAX_GRID, _>(mc_pairs, seed, |rng| {
        let x = task.sample_x(rng);
        let xp = task.sample_x(rng);
        let gap = (task.eta_unchecked(&x, &xp) - 0.5).abs();
        let mut out = [0.0; MAX_GRID];
        for (o, t) in out.iter_mut().zip(&grid) {
            *o = if gap <= *t { 1.0 } else { 0.0 };
        }
        out
    });

    let mut points: Vec<NoisePoint> = grid
        .iter()
        .zip(&estimates)
        .map(|(&t, e)| NoisePoint { t, mass: e.mean, mass_stderr: e.stderr, residual: None })
        .collect();
    if points.iter().all(|p| p.mass == 0.0) {
        return Err(Error::HardMargin);
    }
    let used: Vec<usize> = (0..points.len()).filter(|&i| points[i].mass > 0.0 && points[i].mass < 1.0).collect();
    if used.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "only {} grid point(s) with 0 < F(t) < 1; move the grid below the largest |eta - 1/2|",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|&i| points[i].t.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|&i| points[i].mass.ln()).collect();
    let fit = LinearFit::ols(&xs, &ys)?;
    for (k, &i) in used.iter().enumerate() {
        points[i].residual = Some(fit.residuals[k]);
    }

    let theta = fit.slope;
    let theta_conservative = if fit.slope_stderr.is_finite() {
        (theta - student_t_quantile(NOISE_CONFIDENCE, fit.dof) * fit.slope_stderr).max(1e-3)
    } else {
        theta.max(1e-3)
    };
    let c_theta_conservative = points
        .iter()
        .filter(|p| p.mass > 0.0)
        .map(|p| (p.mass + 2.0 * p.mass_stderr) / p.t.powf(theta_conservative))
        .fold(0.0, f64::max);

    Ok(NoiseFit {
        theta,
        c_theta: fit.intercept.exp(),
        theta_stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
        theta_conservative,
        c_theta_conservative,
        points,
        mc_pairs,
    })
}
