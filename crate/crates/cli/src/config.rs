//! TOML experiment configuration with `[task]`, `[model]`, `[train]` and
//! `[eval]` blocks. Unknown keys are rejected; every error names the file
//! and, where it can be found, the line of the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use simlearn::erm::{InitScheme, Optimizer, RiskPairs, TrainConfig, TrainPairs};
use simlearn::synthetic::{ConditionalModel, CosineProduct, LabelLaw, PiecewiseModel, SyntheticTask};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `p_1(x) = 1/2 + A prod_j cos(2 pi k x_j)`, two labels.
    Cosine,
    /// Constant law `below` for `x_1 < split`, `above` otherwise.
    TwoLevel,
    /// Law interpolated linearly in `x_1` from `from` to `to`.
    Linear,
    /// Continuously distributed labels.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    pub family: Family,
    #[serde(default = "one_usize")]
    pub p: usize,
    /// Number of labels; inferred from the probability vectors when omitted.
    pub m: Option<usize>,
    #[serde(default = "one_u32")]
    pub r: u32,
    /// Defaults to the largest amplitude with `A (2 pi k)^r <= 1/2`.
    pub amplitude: Option<f64>,
    #[serde(default = "half")]
    pub frequency: f64,
    pub split: Option<f64>,
    pub below: Option<Vec<f64>>,
    pub above: Option<Vec<f64>>,
    pub from: Option<Vec<f64>>,
    pub to: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "two_usize")]
    pub subnets: usize,
    /// Hidden widths of every sub-network (`rate-sweep` sizes them from `n`).
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Target `a` of the sign approximator (`rate-sweep` derives it from `n`).
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_a_start_factor")]
    pub a_start_factor: f64,
    #[serde(default = "default_anneal_epochs")]
    pub anneal_epochs: usize,
    #[serde(default = "yes")]
    pub clamp: bool,
    #[serde(default)]
    pub init_output_bias: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            subnets: 2,
            hidden: default_hidden(),
            epsilon: default_epsilon(),
            a: default_a(),
            a_start_factor: default_a_start_factor(),
            anneal_epochs: default_anneal_epochs(),
            clamp: true,
            init_output_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    /// Training sample size for `gen-data` and `train-eval`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_pair_batch")]
    pub pair_batch: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerName,
    #[serde(default = "default_range_penalty")]
    pub range_penalty: f64,
    /// Pairs drawn per epoch; all ordered pairs when this reaches `n (n - 1)`.
    #[serde(default = "default_pairs_per_epoch")]
    pub pairs_per_epoch: usize,
    /// Pairs for the recorded risk; all ordered pairs when this reaches `n (n - 1)`.
    #[serde(default = "default_risk_pairs")]
    pub risk_pairs: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        Self {
            n: default_n(),
            epochs: default_epochs(),
            pair_batch: default_pair_batch(),
            learning_rate: default_lr(),
            lr_decay: default_lr_decay(),
            optimizer: default_optimizer(),
            range_penalty: default_range_penalty(),
            pairs_per_epoch: default_pairs_per_epoch(),
            risk_pairs: default_risk_pairs(),
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    #[serde(default = "default_mc_pairs")]
    pub mc_pairs: usize,
    /// Pairs for the noise-exponent fit.
    #[serde(default = "default_noise_pairs")]
    pub noise_pairs: usize,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Skips the noise fit when set.
    pub theta: Option<f64>,
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_budget_scale")]
    pub budget_scale: f64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            mc_pairs: default_mc_pairs(),
            noise_pairs: default_noise_pairs(),
            t_grid: default_t_grid(),
            theta: None,
            n_list: Vec::new(),
            seeds: default_seeds(),
            budget_scale: default_budget_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub eval: EvalBlock,
}

fn one_usize() -> usize {
    1
}
fn two_usize() -> usize {
    2
}
fn one_u32() -> u32 {
    1
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn default_hidden() -> Vec<usize> {
    vec![2]
}
fn default_epsilon() -> f64 {
    1e-2
}
fn default_a() -> f64 {
    0.25
}
fn default_a_start_factor() -> f64 {
    30.0
}
fn default_anneal_epochs() -> usize {
    50
}
fn default_n() -> usize {
    1024
}
fn default_epochs() -> usize {
    60
}
fn default_pair_batch() -> usize {
    512
}
fn default_lr() -> f64 {
    0.03
}
fn default_lr_decay() -> f64 {
    0.95
}
fn default_optimizer() -> OptimizerName {
    OptimizerName::Normalized
}
fn default_range_penalty() -> f64 {
    0.1
}
fn default_pairs_per_epoch() -> usize {
    16_384
}
fn default_risk_pairs() -> usize {
    32_768
}
fn default_restarts() -> usize {
    4
}
fn default_mc_pairs() -> usize {
    100_000
}
fn default_noise_pairs() -> usize {
    1_000_000
}
fn default_t_grid() -> Vec<f64> {
    vec![0.001, 0.002, 0.004, 0.008, 0.016, 0.03]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_budget_scale() -> f64 {
    1.0
}

/// A parsed configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    text: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, text)
    }

    pub fn parse(path: &Path, text: String) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of_offset(&text, s.start)),
            message: e.message().to_string(),
        })?;
        let loaded = Self { config, path: path.to_path_buf(), text };
        loaded.validate()?;
        Ok(loaded)
    }

    /// First 16 hex digits of the SHA-256 of the config file.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.text.as_bytes())[..8])
    }

    pub fn error(&self, block: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { path: self.path.clone(), line: find_key(&self.text, block, key), message: message.into() }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let t = &c.task;
        if t.p == 0 {
            return Err(self.error("task", "p", "p must be at least 1"));
        }
        if t.r == 0 {
            return Err(self.error("task", "r", "r must be at least 1"));
        }
        if let Err(e) = self.task() {
            return Err(self.error("task", "family", e.to_string()));
        }
        let m = &c.model;
        if m.subnets == 0 {
            return Err(self.error("model", "subnets", "need at least one sub-network"));
        }
        if m.hidden.contains(&0) {
            return Err(self.error("model", "hidden", "hidden widths must be positive"));
        }
        if !(m.epsilon > 0.0 && m.epsilon < 0.5) {
            return Err(self.error("model", "epsilon", format!("epsilon must lie in (0, 1/2), got {}", m.epsilon)));
        }
        if !(m.a > 0.0 && m.a.is_finite()) {
            return Err(self.error("model", "a", "a must be positive"));
        }
        if !(m.a_start_factor >= 1.0 && m.a_start_factor.is_finite()) {
            return Err(self.error("model", "a_start_factor", "a_start_factor must be at least 1"));
        }
        let tr = &c.train;
        if tr.n < 2 {
            return Err(self.error("train", "n", format!("n must be at least 2, got {}", tr.n)));
        }
        if m.anneal_epochs >= tr.epochs {
            return Err(self.error("model", "anneal_epochs", "anneal_epochs must be smaller than train.epochs"));
        }
        if tr.restarts == 0 {
            return Err(self.error("train", "restarts", "restarts must be at least 1"));
        }
        if tr.pairs_per_epoch == 0 {
            return Err(self.error("train", "pairs_per_epoch", "pairs_per_epoch must be at least 1"));
        }
        if tr.risk_pairs == 0 {
            return Err(self.error("train", "risk_pairs", "risk_pairs must be at least 1"));
        }
        if let Err(e) = self.train_config(tr.n, m.a).validate() {
            return Err(self.error("train", "learning_rate", e.to_string()));
        }
        let ev = &c.eval;
        if ev.mc_pairs < 2 {
            return Err(self.error("eval", "mc_pairs", "mc_pairs must be at least 2"));
        }
        if ev.noise_pairs < 2 {
            return Err(self.error("eval", "noise_pairs", "noise_pairs must be at least 2"));
        }
        if ev.t_grid.len() < 2 || ev.t_grid.iter().any(|t| !(*t > 0.0 && *t <= 0.5)) {
            return Err(self.error("eval", "t_grid", "t_grid needs at least two values in (0, 1/2]"));
        }
        if let Some(theta) = ev.theta {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(self.error("eval", "theta", "theta must be positive"));
            }
        }
        if ev.n_list.iter().any(|&n| n < 3) {
            return Err(self.error("eval", "n_list", "every n must be at least 3"));
        }
        if !(ev.budget_scale > 0.0 && ev.budget_scale.is_finite()) {
            return Err(self.error("eval", "budget_scale", "budget_scale must be positive"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.config.task.seed
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.config.task.seed = seed;
    }

    pub fn task(&self) -> simlearn::Result<SyntheticTask> {
        let t = &self.config.task;
        let missing = |key: &str| simlearn::Error::Parameter(format!("family {:?} needs `{key}`", t.family));
        let (law, m) = match t.family {
            Family::Cosine => {
                let amplitude = t.amplitude.unwrap_or_else(|| CosineProduct::max_amplitude(t.frequency, t.r));
                let model = CosineProduct::new(t.p, amplitude, t.frequency, t.r)?;
                (LabelLaw::Conditional(ConditionalModel::CosineProduct(model)), Some(2))
            }
            Family::TwoLevel => {
                let split = t.split.ok_or_else(|| missing("split"))?;
                let below = t.below.clone().ok_or_else(|| missing("below"))?;
                let above = t.above.clone().ok_or_else(|| missing("above"))?;
                let k = below.len();
                let model = PiecewiseModel::two_level(t.p, split, below, above)?;
                (LabelLaw::Conditional(ConditionalModel::Piecewise(model)), Some(k))
            }
            Family::Linear => {
                let from = t.from.clone().ok_or_else(|| missing("from"))?;
                let to = t.to.clone().ok_or_else(|| missing("to"))?;
                let k = from.len();
                let model = PiecewiseModel::linear(t.p, from, to)?;
                (LabelLaw::Conditional(ConditionalModel::Piecewise(model)), Some(k))
            }
            Family::Continuous => (LabelLaw::ContinuousLabels, None),
        };
        if let (Some(want), Some(got)) = (t.m, m) {
            if want != got {
                return Err(simlearn::Error::Parameter(format!("m = {want} but the label law has {got} labels")));
            }
        }
        SyntheticTask::new(law, t.p, t.seed)
    }

    /// Training settings for a sample of size `n` ending at `target_a`.
    pub fn train_config(&self, n: usize, target_a: f64) -> TrainConfig {
        let (tr, m) = (&self.config.train, &self.config.model);
        let all = n.saturating_mul(n.saturating_sub(1));
        TrainConfig {
            epochs: tr.epochs,
            pair_batch: tr.pair_batch,
            learning_rate: tr.learning_rate,
            lr_decay: tr.lr_decay,
            a_schedule: Some(simlearn::risk::anneal_schedule(target_a, m.a_start_factor, m.anneal_epochs)),
            optimizer: match tr.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd,
                OptimizerName::Normalized => Optimizer::Normalized,
            },
            range_penalty: tr.range_penalty,
            init: InitScheme { output_bias: m.init_output_bias, output_scale: 1.0 },
            seed: simlearn::mc::derive_seed(self.seed(), 3),
            pair_strategy: if tr.pairs_per_epoch >= all {
                TrainPairs::AllPairs
            } else {
                TrainPairs::Subsample { pairs_per_epoch: tr.pairs_per_epoch }
            },
            risk_pairs: if tr.risk_pairs >= all { RiskPairs::AllPairs } else { RiskPairs::Subsample { pairs: tr.risk_pairs } },
            budget: None,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[block]`, 1-based.
fn find_key(text: &str, block: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == block {
                header = Some(k + 1);
            }
            continue;
        }
        if current == block {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig, ConfigError> {
        LoadedConfig::parse(Path::new("test.toml"), text.to_string())
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("[task]\nfamily = \"cosine\"\n").unwrap();
        assert_eq!(c.config.train.n, 1024);
        assert_eq!(c.config.model.subnets, 2);
        let task = c.task().unwrap();
        assert_eq!(task, SyntheticTask::builtin_1d(0));
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let err = parse("[task]\nfamily = \"cosine\"\n\n[train]\nepochs = 3\nlearnig_rate = 0.1\n").unwrap_err();
        assert_eq!(err.line, Some(6));
        assert!(err.message.contains("learnig_rate"), "{}", err.message);
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let err = parse("[task]\nfamily = \"cosine\"\n[train]\nepochs = 4\nn = 1\n").unwrap_err();
        assert_eq!(err.line, Some(5));
        assert!(err.to_string().starts_with("test.toml:5:"));
        let err = parse("[task]\nfamily = \"two_level\"\nsplit = 0.5\nbelow = [0.5, 0.5]\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("above"));
    }

    #[test]
    fn label_count_must_match() {
        let text = "[task]\nfamily = \"linear\"\nm = 2\nfrom = [0.2, 0.3, 0.5]\nto = [0.5, 0.5, 0.0]\n";
        assert!(parse(text).is_err());
        assert!(parse(&text.replace("m = 2", "m = 3")).is_ok());
    }

    #[test]
    fn small_samples_train_on_all_pairs() {
        let mut c = parse("[task]\nfamily = \"cosine\"\n[train]\nn = 40\n").unwrap();
        assert_eq!(c.train_config(40, 0.3).pair_strategy, TrainPairs::AllPairs);
        assert_eq!(c.train_config(400, 0.3).pair_strategy, TrainPairs::Subsample { pairs_per_epoch: 16_384 });
        let seed = c.train_config(40, 0.3).seed;
        c.override_seed(9);
        assert_ne!(c.train_config(40, 0.3).seed, seed);
    }

    #[test]
    fn hash_tracks_the_text() {
        let a = parse("[task]\nfamily = \"cosine\"\n").unwrap();
        let b = parse("[task]\nfamily = \"cosine\"\nseed = 0\n").unwrap();
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.hash(), b.hash());
    }
}
