//! Pairwise empirical risk `1/(n(n-1)) sum_{i != j} l(tau(y_i, y_j) d(x_i, x_j))`
//! and subgradient training of the sub-networks of a [`StructuredMetricNet`].
//!
//! Training approximates the empirical risk minimizer; it does not compute it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadgets::{DOMAIN_HI, DOMAIN_LO};
use crate::loss::LossFunction;
use crate::mc::derive_seed;
use crate::relu_net::Gradients;
use crate::structured::{aggregate_complexity, HypothesisBudget, StructuredMetricNet};
use crate::synthetic::{tau, Dataset};

/// Pairs per parallel work unit. Fixed so reductions do not depend on the thread count.
const CHUNK: usize = 64;

/// Derivative of `(1 + tau d)_+` in `d`, with 0 at the kink.
#[inline]
pub fn hinge_subgradient(tau: f64, d_value: f64) -> f64 {
    if 1.0 + tau * d_value > 0.0 {
        tau
    } else {
        0.0
    }
}

/// Which ordered pairs `(i, j)`, `i != j`, enter a risk evaluation or an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairStrategy {
    AllPairs,
    /// `pairs` draws uniform over ordered pairs, from `seed`.
    Subsample { pairs: usize, seed: u64 },
}

#[inline]
fn decode_pair(k: u64, n: usize) -> (usize, usize) {
    let m = (n - 1) as u64;
    let i = (k / m) as usize;
    let j = (k % m) as usize;
    (i, if j >= i { j + 1 } else { j })
}

fn draw_pair<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (usize, usize) {
    decode_pair(rng.gen_range(0..(n as u64) * (n as u64 - 1)), n)
}

fn pair_list(strategy: &PairStrategy, n: usize) -> Vec<(usize, usize)> {
    match *strategy {
        PairStrategy::AllPairs => (0..(n as u64) * (n as u64 - 1)).map(|k| decode_pair(k, n)).collect(),
        PairStrategy::Subsample { pairs, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..pairs).map(|_| draw_pair(&mut rng, n)).collect()
        }
    }
}

fn subnet_table(net: &StructuredMetricNet, data: &Dataset) -> Vec<Vec<f64>> {
    data.samples.par_iter().map(|s| net.subnet_outputs(&s.x)).collect()
}

fn check_data(net: &StructuredMetricNet, data: &Dataset) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::Parameter(format!("empirical risk needs n >= 2, got {}", data.len())));
    }
    if data.input_dim != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: data.input_dim });
    }
    for s in &data.samples {
        if s.x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("{:?} lies outside [0, 1]^{}", s.x, data.input_dim)));
        }
    }
    Ok(())
}

/// Pair-averaged loss. `AllPairs` gives the exact U-statistic; `Subsample`
/// an unbiased estimate of it.
pub fn empirical_risk(net: &StructuredMetricNet, data: &Dataset, loss: LossFunction, strategy: &PairStrategy) -> Result<f64> {
    check_data(net, data)?;
    let table = subnet_table(net, data);
    Ok(risk_from_table(net, data, &table, loss, strategy))
}

fn risk_from_table(
    net: &StructuredMetricNet,
    data: &Dataset,
    table: &[Vec<f64>],
    loss: LossFunction,
    strategy: &PairStrategy,
) -> f64 {
    let n = data.len();
    let pair_loss = |i: usize, j: usize| {
        let d = net.head(&table[i], &table[j]);
        loss.eval(tau(data.samples[i].y, data.samples[j].y) * d)
    };
    match *strategy {
        PairStrategy::AllPairs => {
            let rows: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| (0..n).filter(|&j| j != i).map(|j| pair_loss(i, j)).sum::<f64>())
                .collect();
            rows.iter().sum::<f64>() / (n as f64 * (n - 1) as f64)
        }
        PairStrategy::Subsample { pairs, .. } => {
            let list = pair_list(strategy, n);
            let chunks: Vec<f64> =
                list.par_chunks(CHUNK).map(|c| c.iter().map(|&(i, j)| pair_loss(i, j)).sum::<f64>()).collect();
            chunks.iter().sum::<f64>() / pairs as f64
        }
    }
}

/// Symmetric-uniform weights on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. Hidden
/// biases use the non-negative half of that range; output biases are shifted
/// by `output_bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    #[serde(default = "default_output_bias")]
    pub output_bias: f64,
    /// Shrinks the output layer's range.
    #[serde(default = "one")]
    pub output_scale: f64,
}

fn default_output_bias() -> f64 {
    0.0
}

impl Default for InitScheme {
    fn default() -> Self {
        Self { output_bias: default_output_bias(), output_scale: 1.0 }
    }
}

impl InitScheme {
    /// Redraws every sub-network parameter from `seed`.
    pub fn initialize(&self, net: &mut StructuredMetricNet, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for h in net.subnets_mut() {
            let depth = h.depth();
            for (k, layer) in h.layers_mut().iter_mut().enumerate() {
                let last = k + 1 == depth;
                let bound = if last { self.output_scale } else { 1.0 } / (layer.in_width() as f64).sqrt();
                layer.weights_mut().iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
                if last {
                    layer.bias_mut().iter_mut().for_each(|b| *b = rng.gen_range(-bound..=bound) + self.output_bias);
                } else {
                    // non-negative so every hidden unit starts alive at the origin
                    layer.bias_mut().iter_mut().for_each(|b| *b = rng.gen_range(0.0..=bound));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pair_batch: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    #[serde(default = "one")]
    pub lr_decay: f64,
    /// Value of `a` for epoch `e` is entry `min(e, len - 1)`; the last entry is the target.
    #[serde(default)]
    pub a_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Weight of a penalty on sub-network outputs outside the product gadget's
    /// domain. Outside it the clamp has zero slope and training stalls.
    #[serde(default)]
    pub range_penalty: f64,
    #[serde(default)]
    pub init: InitScheme,
    pub seed: u64,
    pub pair_strategy: TrainPairs,
    /// Pairs on which the per-epoch risk is recorded.
    pub risk_pairs: RiskPairs,
    #[serde(default)]
    pub budget: Option<HypothesisBudget>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// Plain subgradient steps.
    #[default]
    Sgd,
    /// Steps of length `learning_rate` along the batch subgradient.
    Normalized,
}

/// Pairs visited by one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainPairs {
    /// Every ordered pair once, shuffled.
    AllPairs,
    /// Fresh uniform draws each epoch.
    Subsample { pairs_per_epoch: usize },
}

/// Pairs used for the recorded risk and best-iterate selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskPairs {
    AllPairs,
    /// A fixed subsample drawn once from the training seed.
    Subsample { pairs: usize },
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.pair_batch == 0 {
            return Err(Error::Parameter("pair_batch must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning rate must be finite and non-negative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Parameter("lr_decay must be positive".into()));
        }
        if let Some(s) = &self.a_schedule {
            if s.is_empty() || s.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(Error::Parameter("a_schedule entries must be positive".into()));
            }
            if s.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Parameter("a_schedule must be non-increasing".into()));
            }
        }
        if !(self.range_penalty >= 0.0 && self.range_penalty.is_finite()) {
            return Err(Error::Parameter("range_penalty must be finite and non-negative".into()));
        }
        if let TrainPairs::Subsample { pairs_per_epoch: 0 } = self.pair_strategy {
            return Err(Error::Parameter("pairs_per_epoch must be at least 1".into()));
        }
        if let RiskPairs::Subsample { pairs: 0 } = self.risk_pairs {
            return Err(Error::Parameter("risk subsample needs at least 1 pair".into()));
        }
        Ok(())
    }

    fn a_for_epoch(&self, epoch: usize, fallback: f64) -> f64 {
        match &self.a_schedule {
            Some(s) => s[epoch.min(s.len() - 1)],
            None => fallback,
        }
    }

    fn target_a(&self, fallback: f64) -> f64 {
        self.a_schedule.as_ref().and_then(|s| s.last().copied()).unwrap_or(fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub risk: f64,
    /// Mean over steps of the parameter-gradient Euclidean norm.
    pub grad_norm: f64,
    /// Fraction of visited pairs with `|1 - 2 sum phi| <= a`.
    pub active_fraction: f64,
    pub a: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_risk: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub final_risk: f64,
    pub steps: usize,
}

struct StepStats {
    grad_norm: f64,
    active: usize,
}

/// Per-pair contribution: upstream gradients on the raw sub-network outputs of both samples.
fn accumulate_chunk(
    net: &StructuredMetricNet,
    data: &Dataset,
    table: &[Option<Vec<f64>>],
    pairs: &[(usize, usize)],
    loss: LossFunction,
    weight: f64,
) -> (Vec<(usize, Vec<f64>)>, usize, f64) {
    let mut out = Vec::with_capacity(2 * pairs.len());
    let mut active = 0;
    let mut loss_sum = 0.0;
    let a = net.a();
    for &(i, j) in pairs {
        let hi = table[i].as_ref().expect("sample evaluated");
        let hj = table[j].as_ref().expect("sample evaluated");
        if net.sign_input(hi, hj).abs() <= a {
            active += 1;
        }
        let (d, du, dv) = net.head_with_grad(hi, hj);
        let t = tau(data.samples[i].y, data.samples[j].y);
        loss_sum += loss.eval(t * d);
        let g = weight * loss.subgradient(t * d) * t;
        if g != 0.0 {
            out.push((i, du.iter().map(|v| v * g).collect()));
            out.push((j, dv.iter().map(|v| v * g).collect()));
        }
    }
    (out, active, loss_sum)
}

fn gradient_step(
    net: &mut StructuredMetricNet,
    data: &Dataset,
    batch: &[(usize, usize)],
    loss: LossFunction,
    rate: f64,
    epoch: usize,
    range_penalty: f64,
    optimizer: Optimizer,
) -> Result<StepStats> {
    let n = data.len();
    let m = net.num_subnets();
    let mut involved = vec![false; n];
    for &(i, j) in batch {
        involved[i] = true;
        involved[j] = true;
    }
    let shared: &StructuredMetricNet = net;
    let table: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|s| involved[s].then(|| shared.subnet_outputs(&data.samples[s].x)))
        .collect();

    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<_> =
        batch.par_chunks(CHUNK).map(|c| accumulate_chunk(shared, data, &table, c, loss, weight)).collect();
    let mut upstream = vec![0.0; n * m];
    let mut active = 0;
    let mut loss_sum = 0.0;
    for (contribs, act, ls) in parts {
        active += act;
        loss_sum += ls;
        for (s, g) in contribs {
            upstream[s * m..(s + 1) * m].iter_mut().zip(&g).for_each(|(u, v)| *u += v);
        }
    }
    if !loss_sum.is_finite() {
        return Err(Error::Divergence { epoch, reason: "non-finite batch loss".into() });
    }

    if range_penalty > 0.0 {
        let involved_count = involved.iter().filter(|v| **v).count() as f64;
        for (s, h) in table.iter().enumerate() {
            let Some(h) = h else { continue };
            for (i, v) in h.iter().enumerate() {
                let push = if *v < DOMAIN_LO { -1.0 } else if *v > DOMAIN_HI { 1.0 } else { 0.0 };
                upstream[s * m + i] += range_penalty * push / involved_count;
            }
        }
    }
    let samples: Vec<usize> = (0..n).filter(|&s| upstream[s * m..(s + 1) * m].iter().any(|v| *v != 0.0)).collect();
    let grads: Vec<Gradients> = (0..m)
        .into_par_iter()
        .map(|i| {
            let h = &shared.subnets()[i];
            let mut g = Gradients::zeros_like(h);
            for &s in &samples {
                let up = upstream[s * m + i];
                if up != 0.0 {
                    h.backward_accumulate(&data.samples[s].x, &[up], &mut g);
                }
            }
            g
        })
        .collect();
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { epoch, reason: "non-finite gradient".into() });
    }
    let grad_norm = grads.iter().map(Gradients::param_norm_sq).sum::<f64>().sqrt();
    if rate != 0.0 {
        match optimizer {
            Optimizer::Sgd => {
                for (h, g) in net.subnets_mut().iter_mut().zip(&grads) {
                    h.apply_step(g, rate);
                }
            }
            Optimizer::Normalized => {
                if grad_norm > 0.0 {
                    for (h, g) in net.subnets_mut().iter_mut().zip(&grads) {
                        h.apply_step(g, rate / grad_norm);
                    }
                }
            }
        }
    }
    Ok(StepStats { grad_norm, active })
}

/// Subgradient descent on the sub-network parameters; the product gadget and
/// `F_a` stay fixed. Returns the recorded iterate with the lowest risk among
/// epochs run at the target `a`.
pub fn train(net: &StructuredMetricNet, data: &Dataset, config: &TrainConfig) -> Result<(StructuredMetricNet, TrainReport)> {
    train_with_loss(net, data, config, LossFunction::Hinge)
}

pub fn train_with_loss(
    net: &StructuredMetricNet,
    data: &Dataset,
    config: &TrainConfig,
    loss: LossFunction,
) -> Result<(StructuredMetricNet, TrainReport)> {
    config.validate()?;
    check_data(net, data)?;
    if let Some(budget) = &config.budget {
        budget.check(&aggregate_complexity(net))?;
    }
    let n = data.len();
    let risk_strategy = match config.risk_pairs {
        RiskPairs::AllPairs => PairStrategy::AllPairs,
        RiskPairs::Subsample { pairs } => PairStrategy::Subsample { pairs, seed: derive_seed(config.seed, 0x5249_534b) },
    };
    let final_a = config.target_a(net.a());
    let mut current = net.clone();
    current.set_a(config.a_for_epoch(0, net.a()))?;
    let initial_risk = {
        let table = subnet_table(&current, data);
        risk_from_table(&current, data, &table, loss, &risk_strategy)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5041_4952));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, StructuredMetricNet)> = None;
    let mut rate = config.learning_rate;
    let mut steps = 0;

    for epoch in 0..config.epochs {
        let a = config.a_for_epoch(epoch, net.a());
        current.set_a(a)?;
        let pairs: Vec<(usize, usize)> = match config.pair_strategy {
            TrainPairs::AllPairs => {
                let mut all: Vec<(usize, usize)> = pair_list(&PairStrategy::AllPairs, n);
                all.shuffle(&mut rng);
                all
            }
            TrainPairs::Subsample { pairs_per_epoch } => (0..pairs_per_epoch).map(|_| draw_pair(&mut rng, n)).collect(),
        };
        let mut norm_sum = 0.0;
        let mut active = 0;
        let mut batches = 0;
        for batch in pairs.chunks(config.pair_batch) {
            let stats = gradient_step(&mut current, data, batch, loss, rate, epoch, config.range_penalty, config.optimizer)?;
            norm_sum += stats.grad_norm;
            active += stats.active;
            batches += 1;
        }
        steps += batches;

        let table = subnet_table(&current, data);
        let risk = risk_from_table(&current, data, &table, loss, &risk_strategy);
        if !risk.is_finite() {
            return Err(Error::Divergence { epoch, reason: "non-finite empirical risk".into() });
        }
        epochs.push(EpochRecord {
            epoch,
            risk,
            grad_norm: norm_sum / batches.max(1) as f64,
            active_fraction: active as f64 / pairs.len().max(1) as f64,
            a,
            learning_rate: rate,
        });
        if a == final_a && best.as_ref().is_none_or(|(r, _, _)| risk < *r) {
            best = Some((risk, epoch, current.clone()));
        }
        rate *= config.lr_decay;
    }

    let (final_risk, best_epoch, mut chosen) = best.unwrap_or_else(|| {
        let last = epochs.last().expect("at least one epoch");
        (last.risk, last.epoch, current.clone())
    });
    chosen.set_a(final_a)?;
    Ok((chosen, TrainReport { initial_risk, epochs, best_epoch, final_risk, steps }))
}

/// Outcome of [`train_restarts`].
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub net: StructuredMetricNet,
    pub report: TrainReport,
    /// Index of the kept restart.
    pub restart: usize,
    /// Restarts that diverged.
    pub diverged: usize,
}

/// Trains from `restarts` fresh initializations of `net` (restart `r` uses
/// `derive_seed(seed, 100 + r)`) and keeps the lowest final training risk.
/// Fails only if every restart diverges.
pub fn train_restarts(
    net: &StructuredMetricNet,
    data: &Dataset,
    config: &TrainConfig,
    restarts: usize,
    seed: u64,
) -> Result<RestartOutcome> {
    if restarts == 0 {
        return Err(Error::Parameter("restarts must be at least 1".into()));
    }
    // every restart sees the same pairs, so training risks are comparable
    let mut start = net.clone();
    let mut best: Option<RestartOutcome> = None;
    let mut last_failure = None;
    let mut diverged = 0;
    for r in 0..restarts {
        config.init.initialize(&mut start, derive_seed(seed, 100 + r as u64));
        match train(&start, data, config) {
            Ok((trained, report)) => {
                if best.as_ref().is_none_or(|b| report.final_risk < b.report.final_risk) {
                    best = Some(RestartOutcome { net: trained, report, restart: r, diverged: 0 });
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                diverged += 1;
                last_failure = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(b) => Ok(RestartOutcome { diverged, ..b }),
        None => Err(last_failure.expect("a restart ran")),
    }
}
