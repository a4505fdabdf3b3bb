//! Monte Carlo risk estimates against a task with known `eta`. Labels are
//! integrated out analytically, so only the input pair is sampled.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::erm::{train_restarts, InitScheme, TrainConfig};
use crate::fit::LinearFit;
use crate::gadgets::ProductGadget;
use crate::loss::LossFunction;
use crate::mc::{derive_seed, sharded_means, try_sharded_means, MeanEstimate};
use crate::relu_net::NetworkComplexity;
use crate::structured::{aggregate_complexity, PairFunction, StructuredMetricNet};
use crate::synthetic::{hinge_true_metric, SyntheticTask};

/// Slack allowed on `|d| <= 1` before the identity estimator refuses a net.
const SUP_NORM_SLACK: f64 = 1e-12;

/// Agreement band for the two excess-risk estimators, in combined standard errors.
pub const AGREEMENT_SIGMAS: f64 = 3.0;

const IDENTITY_SALT: u64 = 0x4944_454e;

fn check_mc(mc_pairs: usize) -> Result<()> {
    if mc_pairs < 100 {
        return Err(Error::Parameter(format!("need at least 100 Monte Carlo pairs, got {mc_pairs}")));
    }
    Ok(())
}

fn check_dims(f: &dyn PairFunction, task: &SyntheticTask) -> Result<()> {
    if f.input_dim() != task.input_dim {
        return Err(Error::Shape { expected: task.input_dim, got: f.input_dim() });
    }
    Ok(())
}

/// The hinge true metric of a task as a pair function.
pub struct TrueMetric<'a>(pub &'a SyntheticTask);

impl PairFunction for TrueMetric<'_> {
    fn input_dim(&self) -> usize {
        self.0.input_dim
    }

    fn value(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        hinge_true_metric(self.0.eta_unchecked(x, x_prime))
    }
}

/// A constant pair function.
pub struct ConstantMetric {
    pub input_dim: usize,
    pub value: f64,
}

impl PairFunction for ConstantMetric {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn value(&self, _: &[f64], _: &[f64]) -> f64 {
        self.value
    }
}

/// `E[eta l(d) + (1 - eta) l(-d)]` over independent input pairs.
pub fn generalization_risk(
    f: &dyn PairFunction,
    task: &SyntheticTask,
    loss: LossFunction,
    mc_pairs: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    check_mc(mc_pairs)?;
    check_dims(f, task)?;
    let [est] = sharded_means(mc_pairs, seed, |rng| {
        let x = task.sample_x(rng);
        let xp = task.sample_x(rng);
        let eta = task.eta_unchecked(&x, &xp);
        let d = f.value(&x, &xp);
        [eta * loss.eval(d) + (1.0 - eta) * loss.eval(-d)]
    });
    Ok(est)
}

/// `E[|2 eta - 1| |d - sgn(1 - 2 eta)|]`, the hinge excess risk of any `d` with `|d| <= 1`.
pub fn excess_risk_identity(f: &dyn PairFunction, task: &SyntheticTask, mc_pairs: usize, seed: u64) -> Result<MeanEstimate> {
    check_mc(mc_pairs)?;
    check_dims(f, task)?;
    let [est] = try_sharded_means(mc_pairs, seed, |rng| {
        let x = task.sample_x(rng);
        let xp = task.sample_x(rng);
        let eta = task.eta_unchecked(&x, &xp);
        let d = f.value(&x, &xp);
        if !(d.abs() <= 1.0 + SUP_NORM_SLACK) {
            return Err(Error::Contract(format!("|d| = {} exceeds 1 at ({x:?}, {xp:?})", d.abs())));
        }
        Ok([(2.0 * eta - 1.0).abs() * (d - hinge_true_metric(eta)).abs()])
    })?;
    Ok(est)
}

/// Hinge risk, Bayes risk and both excess-risk estimators of one pair function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub risk: f64,
    pub risk_stderr: f64,
    pub bayes_risk: f64,
    pub bayes_stderr: f64,
    /// Paired difference `risk - bayes` on the same pairs.
    pub excess_direct: f64,
    pub excess_direct_stderr: f64,
    /// Identity estimator on an independent stream.
    pub excess_identity: f64,
    pub excess_identity_stderr: f64,
    pub mc_pairs: usize,
    pub seed: u64,
}

impl RiskReport {
    pub fn combined_stderr(&self) -> f64 {
        self.excess_direct_stderr.hypot(self.excess_identity_stderr)
    }

    /// The two excess estimators agree within [`AGREEMENT_SIGMAS`] combined standard errors.
    pub fn estimators_agree(&self) -> bool {
        (self.excess_direct - self.excess_identity).abs() <= AGREEMENT_SIGMAS * self.combined_stderr()
    }

    /// `excess_direct >= -3 stderr`.
    pub fn excess_nonnegative(&self) -> bool {
        self.excess_direct >= -AGREEMENT_SIGMAS * self.excess_direct_stderr
    }
}

pub fn risk_report(f: &dyn PairFunction, task: &SyntheticTask, mc_pairs: usize, seed: u64) -> Result<RiskReport> {
    check_mc(mc_pairs)?;
    check_dims(f, task)?;
    let loss = LossFunction::Hinge;
    let [risk, bayes, direct] = sharded_means(mc_pairs, seed, |rng| {
        let x = task.sample_x(rng);
        let xp = task.sample_x(rng);
        let eta = task.eta_unchecked(&x, &xp);
        let d = f.value(&x, &xp);
        let r = eta * loss.eval(d) + (1.0 - eta) * loss.eval(-d);
        let b = 2.0 * eta.min(1.0 - eta);
        [r, b, r - b]
    });
    let identity = excess_risk_identity(f, task, mc_pairs, derive_seed(seed, IDENTITY_SALT))?;
    Ok(RiskReport {
        risk: risk.mean,
        risk_stderr: risk.stderr,
        bayes_risk: bayes.mean,
        bayes_stderr: bayes.stderr,
        excess_direct: direct.mean,
        excess_direct_stderr: direct.stderr,
        excess_identity: identity.mean,
        excess_identity_stderr: identity.stderr,
        mc_pairs,
        seed,
    })
}

/// Moments of `q = l(tau d) - l(tau d_rho)` for one pair function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub mean_q: f64,
    pub mean_q_stderr: f64,
    pub mean_q_sq: f64,
    pub mean_q_sq_stderr: f64,
    /// `M (E q)^beta`.
    pub bound: f64,
    /// `bound - E[q^2]`.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceExpectationReport {
    pub theta: f64,
    pub c_theta: f64,
    pub beta: f64,
    pub m_constant: f64,
    pub rows: Vec<MomentRow>,
    pub pass_fraction: f64,
}

/// `(beta, M) = (theta / (theta + 1), 2^{3/(theta+1)} C^{1/(theta+1)})`.
pub fn variance_expectation_constants(theta: f64, c_theta: f64) -> (f64, f64) {
    let k = 1.0 / (theta + 1.0);
    (theta * k, 2f64.powf(3.0 * k) * c_theta.powf(k))
}

pub fn moments_of_excess_loss(f: &dyn PairFunction, task: &SyntheticTask, mc_pairs: usize, seed: u64) -> Result<[MeanEstimate; 2]> {
    check_mc(mc_pairs)?;
    check_dims(f, task)?;
    let loss = LossFunction::Hinge;
    Ok(sharded_means(mc_pairs, seed, |rng| {
        let x = task.sample_x(rng);
        let xp = task.sample_x(rng);
        let eta = task.eta_unchecked(&x, &xp);
        let d = f.value(&x, &xp);
        let dr = hinge_true_metric(eta);
        let q_same = loss.eval(d) - loss.eval(dr);
        let q_diff = loss.eval(-d) - loss.eval(-dr);
        [eta * q_same + (1.0 - eta) * q_diff, eta * q_same * q_same + (1.0 - eta) * q_diff * q_diff]
    }))
}

/// Checks `E[q^2] <= M (E q)^beta` for every pair function.
pub fn variance_expectation_check(
    nets: &[&dyn PairFunction],
    task: &SyntheticTask,
    theta: f64,
    c_theta: f64,
    mc_pairs: usize,
    seed: u64,
) -> Result<VarianceExpectationReport> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Parameter(format!("theta must be positive and finite, got {theta}")));
    }
    if !(c_theta > 0.0 && c_theta.is_finite()) {
        return Err(Error::Parameter(format!("C_theta must be positive and finite, got {c_theta}")));
    }
    if nets.is_empty() {
        return Err(Error::Parameter("no pair functions to check".into()));
    }
    let (beta, m_constant) = variance_expectation_constants(theta, c_theta);
    let mut rows = Vec::with_capacity(nets.len());
    for (k, f) in nets.iter().enumerate() {
        let [q, q2] = moments_of_excess_loss(*f, task, mc_pairs, derive_seed(seed, k as u64))?;
        if q.mean < -AGREEMENT_SIGMAS * q.stderr {
            return Err(Error::Contract(format!(
                "net {k}: E[q] = {} is negative beyond noise (stderr {})",
                q.mean, q.stderr
            )));
        }
        let bound = m_constant * q.mean.max(0.0).powf(beta);
        rows.push(MomentRow {
            mean_q: q.mean,
            mean_q_stderr: q.stderr,
            mean_q_sq: q2.mean,
            mean_q_sq_stderr: q2.stderr,
            bound,
            margin: bound - q2.mean,
            holds: q2.mean <= bound,
        });
    }
    let pass_fraction = rows.iter().filter(|r| r.holds).count() as f64 / rows.len() as f64;
    Ok(VarianceExpectationReport { theta, c_theta, beta, m_constant, rows, pass_fraction })
}

/// Sub-network sizes for sample size `n` with unit-scale constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecipe {
    pub depth: usize,
    pub max_weights: usize,
    pub max_units: usize,
    /// Width of every hidden layer; 0 when `depth == 1`.
    pub hidden_width: usize,
    pub a: f64,
}

/// `L = ceil(p / (p + (theta + 2) r) ln(n / ln n))`, `W = U = ceil(scale e^L)`,
/// `a = (L / e^L)^{r/p}`, and the widest equal-width sub-network that fits.
pub fn budget_recipe(n: usize, input_dim: usize, smoothness: u32, theta: f64, scale: f64) -> Result<BudgetRecipe> {
    if n < 3 {
        return Err(Error::Parameter("budget recipe needs n >= 3".into()));
    }
    if smoothness == 0 || !(theta > 0.0) || !(scale > 0.0) {
        return Err(Error::Parameter("budget recipe needs r >= 1, theta > 0 and scale > 0".into()));
    }
    let (p, r, nf) = (input_dim as f64, smoothness as f64, n as f64);
    let depth = ((p / (p + (theta + 2.0) * r)) * (nf / nf.ln()).ln()).ceil().max(1.0) as usize;
    let cap = (scale * (depth as f64).exp()).ceil() as usize;
    let a = (depth as f64 / (depth as f64).exp()).powf(r / p);
    let cost = |k: usize| -> (usize, usize) {
        if depth == 1 {
            (input_dim + 1, 1)
        } else {
            let w = (input_dim + 1) * k + (depth - 2) * (k + 1) * k + k + 1;
            (w, (depth - 1) * k + 1)
        }
    };
    let hidden_width = if depth == 1 {
        0
    } else {
        (1..=cap).take_while(|&k| cost(k).0 <= cap && cost(k).1 <= cap).last().unwrap_or(0)
    };
    let (w, u) = cost(hidden_width.max(1));
    if w > cap || u > cap {
        return Err(Error::Parameter(format!("no sub-network of depth {depth} fits W = U = {cap}")));
    }
    Ok(BudgetRecipe { depth, max_weights: cap, max_units: cap, hidden_width, a })
}

/// `-(theta + 1) r / (p + (theta + 2) r)`.
pub fn reference_exponent(input_dim: usize, smoothness: u32, theta: f64) -> f64 {
    let (p, r) = (input_dim as f64, smoothness as f64);
    -(theta + 1.0) * r / (p + (theta + 2.0) * r)
}

/// Knobs of a learning-curve sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub num_subnets: usize,
    pub clamp_subnet_output: bool,
    /// Constant in `W = U = ceil(scale e^L)`.
    pub budget_scale: f64,
    /// Training settings; `seed` and `a_schedule` are set per row.
    pub train: TrainConfig,
    /// Training starts at `a_start_factor * a` and anneals geometrically to
    /// the recipe's `a` over the first `anneal_epochs` epochs.
    pub a_start_factor: f64,
    pub anneal_epochs: usize,
    /// Independent initializations per row; the one with the lowest
    /// training risk is kept.
    pub restarts: usize,
    pub mc_pairs: usize,
    /// Exponent fed to the recipe and the reference line.
    pub theta: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut ns = self.n_list.clone();
        ns.sort_unstable();
        ns.dedup();
        if ns.len() < 4 {
            return Err(Error::Parameter("sweep needs at least 4 distinct n values".into()));
        }
        if ns[ns.len() - 1] < 8 * ns[0] {
            return Err(Error::Parameter("largest n must be at least 8 times the smallest".into()));
        }
        if self.seeds.len() < 3 {
            return Err(Error::Parameter("sweep needs at least 3 seeds".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Parameter("restarts must be at least 1".into()));
        }
        if self.num_subnets == 0 {
            return Err(Error::Parameter("need at least one sub-network".into()));
        }
        if !(self.a_start_factor >= 1.0 && self.a_start_factor.is_finite()) {
            return Err(Error::Parameter("a_start_factor must be >= 1".into()));
        }
        check_mc(self.mc_pairs)?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub depth: usize,
    pub hidden_width: usize,
    pub a: f64,
    pub complexity: NetworkComplexity,
    pub excess: f64,
    pub excess_stderr: f64,
    pub train_risk: f64,
    pub epochs: usize,
    /// Set when training failed; the row is excluded from the fit.
    pub failure: Option<String>,
    /// Not part of the reproducible output.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub median_excess: f64,
    pub stderr: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub points: Vec<SweepPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// One-sided 95% upper bound on the slope.
    pub slope_upper_95: f64,
    pub reference_exponent: f64,
    pub theta: f64,
}

impl SweepResult {
    /// Adjacent medians never rise by more than their combined standard error.
    pub fn medians_non_increasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].median_excess <= w[0].median_excess + w[0].stderr.hypot(w[1].stderr))
    }

    pub fn slope_negative_95(&self) -> bool {
        self.slope_upper_95 < 0.0
    }
}

/// `a f^{1 - e/k}` for `e = 0..=k`: geometric from `f a` down to `a`.
pub fn anneal_schedule(a: f64, start_factor: f64, anneal_epochs: usize) -> Vec<f64> {
    if anneal_epochs == 0 {
        return vec![a];
    }
    let k = anneal_epochs as f64;
    let mut s: Vec<f64> = (0..anneal_epochs).map(|e| a * start_factor.powf(1.0 - e as f64 / k)).collect();
    s.push(a);
    s
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

fn sweep_row(task: &SyntheticTask, product: &std::sync::Arc<ProductGadget>, cfg: &SweepConfig, n: usize, seed: u64) -> Result<SweepRow> {
    let start = Instant::now();
    let p = task.input_dim;
    let recipe = budget_recipe(n, p, sweep_smoothness(task), cfg.theta, cfg.budget_scale)?;
    let row_seed = derive_seed(seed, n as u64);
    let hidden = vec![recipe.hidden_width; recipe.depth - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(row_seed);
    let net = StructuredMetricNet::random(p, cfg.num_subnets, &hidden, product.clone(), recipe.a, cfg.clamp_subnet_output, &mut rng)?;
    let data = task.with_seed(derive_seed(row_seed, 2)).sample_dataset(n)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(row_seed, 3);
    train_cfg.a_schedule = Some(anneal_schedule(recipe.a, cfg.a_start_factor, cfg.anneal_epochs));
    train_cfg.budget = None;

    let complexity = aggregate_complexity(&net);
    let base = SweepRow {
        n,
        seed,
        depth: recipe.depth,
        hidden_width: recipe.hidden_width,
        a: recipe.a,
        complexity,
        excess: f64::NAN,
        excess_stderr: f64::NAN,
        train_risk: f64::NAN,
        epochs: train_cfg.epochs,
        failure: None,
        wall_seconds: 0.0,
    };
    let row = match train_restarts(&net, &data, &train_cfg, cfg.restarts, row_seed) {
        Ok(best) => {
            let excess = excess_risk_identity(&best.net, task, cfg.mc_pairs, derive_seed(row_seed, 4))?;
            SweepRow { excess: excess.mean, excess_stderr: excess.stderr, train_risk: best.report.final_risk, ..base }
        }
        Err(e @ Error::Divergence { .. }) => SweepRow { failure: Some(e.to_string()), ..base },
        Err(e) => return Err(e),
    };
    Ok(SweepRow { wall_seconds: start.elapsed().as_secs_f64(), ..row })
}

/// Trains one net per `(n, seed)`, measures its excess risk, and fits
/// `log(median excess)` against `log n`.
pub fn rate_sweep(task: &SyntheticTask, product: std::sync::Arc<ProductGadget>, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut ns = cfg.n_list.clone();
    ns.sort_unstable();
    ns.dedup();
    let jobs: Vec<(usize, u64)> = ns.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let rows: Vec<SweepRow> =
        jobs.par_iter().map(|&(n, s)| sweep_row(task, &product, cfg, n, s)).collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for &n in &ns {
        let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n && r.failure.is_none()).collect();
        if ok.is_empty() {
            continue;
        }
        let k = ok.len() as f64;
        let mut values: Vec<f64> = ok.iter().map(|r| r.excess).collect();
        let mean = values.iter().sum::<f64>() / k;
        let spread = if ok.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        let mc = ok.iter().map(|r| r.excess_stderr.powi(2)).sum::<f64>() / k;
        points.push(SweepPoint { n, median_excess: median(&mut values), stderr: ((spread + mc) / k).sqrt(), rows: ok.len() });
    }
    if points.len() < 4 {
        return Err(Error::DegenerateFit(format!("only {} n values survived training", points.len())));
    }
    if points.iter().any(|p| p.median_excess <= 0.0) {
        return Err(Error::DegenerateFit("a median excess risk is not positive; cannot take logs".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_excess.ln()).collect();
    let fit = LinearFit::ols(&xs, &ys)?;
    Ok(SweepResult {
        rows,
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_stderr,
        slope_upper_95: fit.slope_upper(0.95),
        reference_exponent: reference_exponent(task.input_dim, sweep_smoothness(task), cfg.theta),
        theta: cfg.theta,
    })
}

fn sweep_smoothness(task: &SyntheticTask) -> u32 {
    match &task.law {
        crate::synthetic::LabelLaw::Conditional(m) => m.smoothness().max(1),
        crate::synthetic::LabelLaw::ContinuousLabels => 1,
    }
}

/// Sweep settings used for the built-in 1-D task: one sub-network per label,
/// a wide anneal, and four restarts per row.
pub fn default_sweep_config(n_list: Vec<usize>, seeds: Vec<u64>, theta: f64) -> SweepConfig {
    SweepConfig {
        n_list,
        seeds,
        num_subnets: 2,
        clamp_subnet_output: true,
        budget_scale: 1.0,
        train: default_sweep_train(),
        a_start_factor: 30.0,
        anneal_epochs: 50,
        restarts: 4,
        mc_pairs: 100_000,
        theta,
    }
}

/// Default training settings for a sweep row.
pub fn default_sweep_train() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        pair_batch: 512,
        learning_rate: 0.03,
        lr_decay: 0.95,
        a_schedule: None,
        optimizer: crate::erm::Optimizer::Normalized,
        range_penalty: 0.1,
        init: InitScheme::default(),
        seed: 0,
        pair_strategy: crate::erm::TrainPairs::Subsample { pairs_per_epoch: 16_384 },
        risk_pairs: crate::erm::RiskPairs::Subsample { pairs: 32_768 },
        budget: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{ConditionalModel, LabelLaw, PiecewiseModel};

    fn constant_eta_task(eta_target: f64) -> SyntheticTask {
        // [q, 1 - q] with q^2 + (1 - q)^2 = eta_target
        let q = (1.0 + (2.0 * eta_target - 1.0).sqrt()) / 2.0;
        let model = PiecewiseModel::constant(1, vec![q, 1.0 - q]).unwrap();
        SyntheticTask::conditional(ConditionalModel::Piecewise(model), 0).unwrap()
    }

    #[test]
    fn zero_metric_has_unit_risk() {
        let task = SyntheticTask::builtin_1d(0);
        let zero = ConstantMetric { input_dim: 1, value: 0.0 };
        let r = generalization_risk(&zero, &task, LossFunction::Hinge, 1000, 1).unwrap();
        assert_eq!((r.mean, r.stderr), (1.0, 0.0));
        assert!(generalization_risk(&zero, &task, LossFunction::Hinge, 10, 1).is_err());
    }

    #[test]
    fn separable_task_zero_risk() {
        let task = SyntheticTask::new(LabelLaw::ContinuousLabels, 1, 0).unwrap();
        let plus = ConstantMetric { input_dim: 1, value: 1.0 };
        assert_eq!(generalization_risk(&plus, &task, LossFunction::Hinge, 1000, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn identity_examples() {
        let task = SyntheticTask::builtin_1d(0);
        let e = excess_risk_identity(&TrueMetric(&task), &task, 1000, 3).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));

        let task9 = constant_eta_task(0.9);
        let zero = ConstantMetric { input_dim: 1, value: 0.0 };
        let e = excess_risk_identity(&zero, &task9, 1000, 3).unwrap();
        assert!((e.mean - 0.8).abs() < 1e-12);

        let big = ConstantMetric { input_dim: 1, value: 1.5 };
        assert!(matches!(excess_risk_identity(&big, &task9, 1000, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn true_metric_risk_is_bayes() {
        let task = SyntheticTask::builtin_1d(0);
        let rep = risk_report(&TrueMetric(&task), &task, 50_000, 9).unwrap();
        assert!(rep.excess_direct.abs() < 1e-12);
        assert!(rep.estimators_agree());
    }

    #[test]
    fn moments_closed_form() {
        let task9 = constant_eta_task(0.9);
        let zero = ConstantMetric { input_dim: 1, value: 0.0 };
        let [q, q2] = moments_of_excess_loss(&zero, &task9, 1000, 1).unwrap();
        assert!((q.mean - 0.8).abs() < 1e-12);
        assert!((q2.mean - 1.0).abs() < 1e-12);
        let rep = variance_expectation_check(&[&TrueMetric(&task9)], &task9, 1.0, 1.0, 1000, 0).unwrap();
        assert_eq!(rep.rows[0].mean_q, 0.0);
        assert!(rep.rows[0].holds);
    }

    #[test]
    fn recipe_and_reference() {
        assert_eq!(reference_exponent(1, 1, 1.0), -0.5);
        let r = budget_recipe(4096, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!(r.depth, 2);
        assert_eq!(r.max_weights, 8);
        assert_eq!(r.hidden_width, 2);
        let r = budget_recipe(256, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!((r.depth, r.hidden_width), (1, 0));
        assert!((r.a - (-1f64).exp()).abs() < 1e-15);
    }
}
