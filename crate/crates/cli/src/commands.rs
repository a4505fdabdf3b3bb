use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use simlearn::erm::train_restarts;
use simlearn::gadgets::{build_product_gadget, build_sign_approx, ProductGadget, AXIS_TOLERANCE};
use simlearn::loss::{
    check_bias_shift, check_monotone, check_self_distance, continuous_label_degeneracy, linspace, LossFunction,
    OracleGrid,
};
use simlearn::mc::derive_seed;
use simlearn::risk::{rate_sweep, risk_report, SweepConfig, SweepResult};
use simlearn::structured::{aggregate_complexity, pdim_bound, StructuredMetricNet};
use simlearn::synthetic::estimate_noise_exponent;

use crate::config::{ConfigError, LoadedConfig};
use crate::output::{num, opt, Provenance, Table};

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Validation(String),
    /// A checked property failed (exit 3).
    Property(String),
    /// Anything else that stopped the run (exit 4).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Property(_) => 3,
            Self::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid input: {m}"),
            Self::Property(m) => write!(f, "property failure: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<simlearn::Error> for CliError {
    fn from(e: simlearn::Error) -> Self {
        use simlearn::Error as E;
        match e {
            E::Shape { .. } | E::Domain(_) | E::Parameter(_) | E::RangeTooSmall { .. } => Self::Validation(e.to_string()),
            E::Certification(_) | E::Contract(_) => Self::Property(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(format!("{e:#}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

/// One PASS/FAIL line of a command summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Default)]
pub struct Summary {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    /// Free-form lines echoed to stdout.
    pub notes: Vec<String>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn write(&mut self, table: &Table, dir: &Path, name: &str, prov: &Provenance) -> Result<(), CliError> {
        let path = dir.join(name);
        table.write(&path, prov)?;
        self.files.push(path);
        Ok(())
    }

    fn write_text(&mut self, dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn summary_text(&self, prov: &Provenance) -> String {
        let mut s = prov.line() + "\n";
        for c in &self.checks {
            s += &format!("{c}\n");
        }
        s
    }
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))
}

/// Hash of a command line for runs without a config file.
fn args_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Grid over `[-5, 5]` for the sign approximator check.
pub const SIGN_GRID_POINTS: usize = 10_000;
pub const SIGN_TOLERANCE: f64 = 1e-12;

pub fn verify_gadgets(eps_list: &[f64], a_list: &[f64], out: &Path) -> Result<Summary, CliError> {
    if eps_list.is_empty() {
        return Err(CliError::Validation("need at least one epsilon".into()));
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
        return Err(CliError::Validation(format!("epsilon must lie in (0, 1/2), got {e}")));
    }
    if let Some(a) = a_list.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(CliError::Validation(format!("a must be positive, got {a}")));
    }
    prepare_out(out)?;
    let prov = Provenance { config_hash: args_hash(&format!("verify-gadgets {eps_list:?} {a_list:?}")), seed: 0 };
    let mut summary = Summary::default();

    let mut table = Table::new(&[
        "epsilon", "sawtooth_depth", "grid_error", "axis_error", "symmetry_error", "depth", "nonzero_weights", "units",
        "depth_per_log",
    ]);
    for &eps in eps_list {
        let phi = match build_product_gadget(eps) {
            Ok(phi) => phi,
            Err(e @ simlearn::Error::Certification(_)) => {
                summary.checks.push(Check::new(format!("product eps={eps}"), false, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let c = phi.certificate();
        let depth_per_log = c.complexity.depth as f64 / (1.0 / eps).ln();
        table.push(vec![
            num(eps),
            phi.sawtooth_depth().to_string(),
            num(c.grid_error),
            num(c.axis_error),
            num(c.symmetry_error),
            c.complexity.depth.to_string(),
            c.complexity.nonzero_weights.to_string(),
            c.complexity.units.to_string(),
            num(depth_per_log),
        ]);
        let pass = c.grid_error <= eps
            && c.axis_error <= AXIS_TOLERANCE
            && depth_per_log <= ProductGadget::DEPTH_LOG_CONSTANT;
        summary.checks.push(Check::new(
            format!("product eps={eps}"),
            pass,
            format!(
                "grid error {:.3e}, axis error {:.1e}, complexity {}, depth/ln(1/eps) {:.2} (limit {})",
                c.grid_error,
                c.axis_error,
                c.complexity,
                depth_per_log,
                ProductGadget::DEPTH_LOG_CONSTANT
            ),
        ));
    }
    summary.write(&table, out, "product_gadgets.csv", &prov)?;

    let mut table = Table::new(&["a", "max_error", "depth", "nonzero_weights", "units"]);
    let grid = linspace(-5.0, 5.0, SIGN_GRID_POINTS);
    for &a in a_list {
        let f = build_sign_approx(a)?;
        let err = sign_approx_error(a, &grid)?;
        let c = f.complexity();
        table.push(vec![num(a), num(err), c.depth.to_string(), c.nonzero_weights.to_string(), c.units.to_string()]);
        summary.checks.push(Check::new(
            format!("sign approximator a={a}"),
            err <= SIGN_TOLERANCE,
            format!("max error {err:.1e} on {SIGN_GRID_POINTS} points of [-5, 5], complexity {c}"),
        ));
    }
    summary.write(&table, out, "sign_approx.csv", &prov)?;
    let text = summary.summary_text(&prov);
    summary.write_text(out, "summary.txt", &text)?;
    Ok(summary)
}

/// Largest deviation of `F_a` from `sgn(t)` outside `[-a, a]` and `t / a` inside.
pub fn sign_approx_error(a: f64, grid: &[f64]) -> Result<f64, CliError> {
    let f = build_sign_approx(a)?;
    Ok(grid
        .iter()
        .map(|&t| {
            let target = if t.abs() >= a { t.signum() } else { t / a };
            (f.eval(t) - target).abs()
        })
        .fold(0.0, f64::max))
}

pub const ETA_POINTS: usize = 101;
pub const SELF_DISTANCE_PAIRS: usize = 1000;
/// Closed forms and the shift identity must agree to twice the refined step.
pub const ORACLE_TOLERANCE: f64 = 2e-6;
pub const BAYES_TOLERANCE: f64 = 1e-9;

fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn metric_lab(losses: &[LossFunction], seed: u64, out: &Path) -> Result<Summary, CliError> {
    if losses.is_empty() {
        return Err(CliError::Validation("need at least one loss".into()));
    }
    prepare_out(out)?;
    let names: Vec<&str> = losses.iter().map(|l| l.name()).collect();
    let prov = Provenance { config_hash: args_hash(&format!("metric-lab {names:?}")), seed };
    let mut summary = Summary::default();
    let grid = OracleGrid::default();
    let etas = linspace(0.01, 0.99, ETA_POINTS);

    for &loss in losses {
        let profile = check_monotone(loss, &etas, &grid)?;
        let mut table = Table::new(&["eta", "tstar_oracle", "tstar_analytic", "q_min"]);
        for i in 0..etas.len() {
            table.push(vec![num(etas[i]), num(profile.tstar[i]), opt(profile.tstar_analytic[i]), num(profile.q_min[i])]);
        }
        summary.write(&table, out, &format!("profile_{}.csv", loss.name()), &prov)?;
        summary.checks.push(Check::new(
            format!("{} minimizer non-increasing", loss.name()),
            profile.is_monotone(),
            format!("{} violations on {ETA_POINTS} points", profile.violations.len()),
        ));
        let gap = profile.max_analytic_gap();
        summary.checks.push(Check::new(
            format!("{} closed form", loss.name()),
            gap <= ORACLE_TOLERANCE,
            format!("max |oracle - closed form| = {gap:.2e}"),
        ));
        if loss == LossFunction::Hinge {
            let worst = etas.iter().zip(&profile.q_min).map(|(e, q)| (q - 2.0 * e.min(1.0 - e)).abs()).fold(0.0, f64::max);
            summary.checks.push(Check::new(
                "hinge Bayes value 2 min(eta, 1 - eta)",
                worst <= BAYES_TOLERANCE,
                format!("max gap {worst:.2e}"),
            ));
        }
    }

    let mut table = Table::new(&["loss", "bias", "eta", "shifted_tstar", "unshifted_tstar", "gap"]);
    let mut worst: f64 = 0.0;
    for &loss in losses {
        for bias in [0.5, 1.0] {
            for k in 1..=9 {
                let eta = k as f64 / 10.0;
                let r = check_bias_shift(loss, eta, bias, &grid)?;
                worst = worst.max(r.gap);
                table.push(vec![loss.name().into(), num(bias), num(eta), num(r.shifted_tstar), num(r.unshifted_tstar), num(r.gap)]);
            }
        }
    }
    summary.write(&table, out, "bias_shift.csv", &prov)?;
    summary.checks.push(Check::new("bias removal", worst <= ORACLE_TOLERANCE, format!("max gap {worst:.2e}")));

    let hinge_grid = OracleGrid { lo: -3.0, hi: 3.0, ..OracleGrid::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut held, mut violations) = (0, 0);
    for _ in 0..SELF_DISTANCE_PAIRS {
        let (a, b) = (random_simplex(&mut rng, 3), random_simplex(&mut rng, 3));
        let r = check_self_distance(LossFunction::Hinge, &a, &b, &hinge_grid)?;
        held += r.precondition as usize;
        violations += r.is_violation() as usize;
    }
    summary.checks.push(Check::new(
        "self-distance is minimal when the precondition holds",
        violations == 0,
        format!("{violations} violations, precondition held on {held} of {SELF_DISTANCE_PAIRS} pairs"),
    ));

    let (p_x, p_xp) = ([0.6, 0.2, 0.2], [1.0, 0.0, 0.0]);
    let r = check_self_distance(LossFunction::Hinge, &p_x, &p_xp, &hinge_grid)?;
    let mut table = Table::new(&["eta_self", "eta_cross", "d_self", "d_cross", "precondition", "self_distance_minimal"]);
    table.push(vec![
        num(r.eta_self_x),
        num(r.eta_cross),
        num(r.d_self_x),
        num(r.d_cross),
        r.precondition.to_string(),
        r.conclusion.to_string(),
    ]);
    summary.write(&table, out, "counterexample.csv", &prov)?;
    let reproduces = r.eta_self_x == 11.0 / 25.0
        && r.eta_cross == 3.0 / 5.0
        && r.d_self_x == 1.0
        && r.d_cross == -1.0
        && !r.precondition
        && !r.conclusion;
    summary.checks.push(Check::new(
        "counterexample",
        reproduces,
        format!("eta(x,x) = {}, eta(x,x') = {}, d(x,x) = {}, d(x,x') = {}", r.eta_self_x, r.eta_cross, r.d_self_x, r.d_cross),
    ));

    let mut table = Table::new(&["loss", "constant_metric"]);
    for &loss in losses {
        table.push(vec![loss.name().into(), num(continuous_label_degeneracy(loss, &grid)?)]);
    }
    summary.write(&table, out, "degeneracy.csv", &prov)?;

    let text = summary.summary_text(&prov);
    summary.write_text(out, "summary.txt", &text)?;
    Ok(summary)
}

pub fn gen_data(cfg: &LoadedConfig, out: &Path) -> Result<Summary, CliError> {
    prepare_out(out)?;
    let task = cfg.task()?;
    let data = task.sample_dataset(cfg.config.train.n)?;
    let prov = Provenance { config_hash: cfg.hash(), seed: cfg.seed() };
    let mut header: Vec<String> = (1..=task.input_dim).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    for s in &data.samples {
        let mut row: Vec<String> = s.x.iter().map(|v| num(*v)).collect();
        row.push(s.y.to_string());
        table.push(row);
    }
    let mut summary = Summary::default();
    summary.write(&table, out, "data.csv", &prov)?;
    summary.notes.push(format!("{} samples in [0, 1]^{}", data.len(), task.input_dim));
    Ok(summary)
}

fn product_for(cfg: &LoadedConfig) -> Result<Arc<ProductGadget>, CliError> {
    Ok(Arc::new(build_product_gadget(cfg.config.model.epsilon)?))
}

pub fn train_eval(cfg: &LoadedConfig, out: &Path) -> Result<Summary, CliError> {
    prepare_out(out)?;
    let c = &cfg.config;
    let seed = cfg.seed();
    let task = cfg.task()?;
    let product = product_for(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let net = StructuredMetricNet::random(
        task.input_dim,
        c.model.subnets,
        &c.model.hidden,
        product,
        c.model.a,
        c.model.clamp,
        &mut rng,
    )?;
    let data = task.with_seed(derive_seed(seed, 2)).sample_dataset(c.train.n)?;
    let train_cfg = cfg.train_config(c.train.n, c.model.a);

    let started = Instant::now();
    let best = train_restarts(&net, &data, &train_cfg, c.train.restarts, seed)?;
    let report = risk_report(&best.net, &task, c.eval.mc_pairs, derive_seed(seed, 4))?;
    let seconds = started.elapsed().as_secs_f64();

    let prov = Provenance { config_hash: cfg.hash(), seed };
    let mut summary = Summary::default();
    let model_dir = out.join("model");
    best.net.save(&model_dir)?;
    summary.files.push(model_dir);

    let mut table = Table::new(&["epoch", "risk", "grad_norm", "active_fraction", "a", "learning_rate"]);
    for e in &best.report.epochs {
        table.push(vec![
            e.epoch.to_string(),
            num(e.risk),
            num(e.grad_norm),
            num(e.active_fraction),
            num(e.a),
            num(e.learning_rate),
        ]);
    }
    summary.write(&table, out, "train.csv", &prov)?;

    let complexity = aggregate_complexity(&best.net);
    let pdim = pdim_bound(&complexity, 1.0)?;
    let mut table = Table::new(&[
        "n", "restart", "best_epoch", "train_risk", "risk", "risk_stderr", "bayes_risk", "bayes_stderr", "excess_direct",
        "excess_direct_stderr", "excess_identity", "excess_identity_stderr", "mc_pairs", "depth", "nonzero_weights", "units",
        "pdim_bound",
    ]);
    table.push(vec![
        c.train.n.to_string(),
        best.restart.to_string(),
        best.report.best_epoch.to_string(),
        num(best.report.final_risk),
        num(report.risk),
        num(report.risk_stderr),
        num(report.bayes_risk),
        num(report.bayes_stderr),
        num(report.excess_direct),
        num(report.excess_direct_stderr),
        num(report.excess_identity),
        num(report.excess_identity_stderr),
        report.mc_pairs.to_string(),
        complexity.depth.to_string(),
        complexity.nonzero_weights.to_string(),
        complexity.units.to_string(),
        num(pdim),
    ]);
    summary.write(&table, out, "risk.csv", &prov)?;

    summary.notes.push(format!("aggregate complexity {complexity}, pseudo-dimension bound {pdim}"));
    summary.notes.push(format!(
        "kept restart {} of {} ({} diverged), training risk {:.4}, {:.1} s",
        best.restart + 1,
        c.train.restarts,
        best.diverged,
        best.report.final_risk,
        seconds
    ));
    summary.checks.push(Check::new(
        "excess risk non-negative",
        report.excess_identity >= -3.0 * report.excess_identity_stderr && report.excess_nonnegative(),
        format!(
            "identity {:.5} +- {:.5}, direct {:.5} +- {:.5}",
            report.excess_identity, report.excess_identity_stderr, report.excess_direct, report.excess_direct_stderr
        ),
    ));
    summary.checks.push(Check::new(
        "excess estimators agree",
        report.estimators_agree(),
        format!("|direct - identity| = {:.2e}, 3 combined stderr = {:.2e}", (report.excess_direct - report.excess_identity).abs(), 3.0 * report.combined_stderr()),
    ));
    Ok(summary)
}

/// Everything `report` needs to redraw a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_hash: String,
    pub seed: u64,
    pub result: SweepResult,
}

pub fn sweep_config(cfg: &LoadedConfig, theta: f64) -> SweepConfig {
    let c = &cfg.config;
    SweepConfig {
        n_list: c.eval.n_list.clone(),
        seeds: c.eval.seeds.clone(),
        num_subnets: c.model.subnets,
        clamp_subnet_output: c.model.clamp,
        budget_scale: c.eval.budget_scale,
        // pair counts are fixed across n, so always subsample
        train: cfg.train_config(usize::MAX, c.model.a),
        a_start_factor: c.model.a_start_factor,
        anneal_epochs: c.model.anneal_epochs,
        restarts: c.train.restarts,
        mc_pairs: c.eval.mc_pairs,
        theta,
    }
}

pub fn rate_sweep_cmd(cfg: &LoadedConfig, out: &Path) -> Result<Summary, CliError> {
    let c = &cfg.config;
    if c.eval.n_list.is_empty() {
        return Err(cfg.error("eval", "n_list", "rate-sweep needs eval.n_list").into());
    }
    prepare_out(out)?;
    let seed = cfg.seed();
    let task = cfg.task()?;
    let prov = Provenance { config_hash: cfg.hash(), seed };
    let mut summary = Summary::default();

    let theta = match c.eval.theta {
        Some(theta) => theta,
        None => {
            let fit = estimate_noise_exponent(&task, c.eval.noise_pairs, &c.eval.t_grid, derive_seed(seed, 5))?;
            let mut table = Table::new(&["t", "mass", "mass_stderr", "residual"]);
            for p in &fit.points {
                table.push(vec![num(p.t), num(p.mass), num(p.mass_stderr), opt(p.residual)]);
            }
            summary.write(&table, out, "noise_fit.csv", &prov)?;
            summary.notes.push(format!(
                "noise exponent {:.3} +- {:.3} (R^2 {:.4}), conservative ({:.3}, {:.3})",
                fit.theta, fit.theta_stderr, fit.r_squared, fit.theta_conservative, fit.c_theta_conservative
            ));
            fit.theta
        }
    };
    let sweep_cfg = sweep_config(cfg, theta);
    sweep_cfg.validate().map_err(|e| CliError::from(cfg.error("eval", "n_list", e.to_string())))?;

    let started = Instant::now();
    let result = rate_sweep(&task, product_for(cfg)?, &sweep_cfg)?;
    summary.notes.push(format!("{} rows in {:.1} s", result.rows.len(), started.elapsed().as_secs_f64()));

    let mut table = Table::new(&[
        "n", "seed", "subnet_depth", "hidden_width", "a", "depth", "nonzero_weights", "units", "excess", "excess_stderr",
        "train_risk", "epochs", "failure",
    ]);
    for r in &result.rows {
        table.push(vec![
            r.n.to_string(),
            r.seed.to_string(),
            r.depth.to_string(),
            r.hidden_width.to_string(),
            num(r.a),
            r.complexity.depth.to_string(),
            r.complexity.nonzero_weights.to_string(),
            r.complexity.units.to_string(),
            num(r.excess),
            num(r.excess_stderr),
            num(r.train_risk),
            r.epochs.to_string(),
            r.failure.clone().unwrap_or_default(),
        ]);
    }
    summary.write(&table, out, "sweep_rows.csv", &prov)?;

    let mut table = Table::new(&["n", "median_excess", "stderr", "rows"]);
    for p in &result.points {
        table.push(vec![p.n.to_string(), num(p.median_excess), num(p.stderr), p.rows.to_string()]);
    }
    summary.write(&table, out, "sweep_points.csv", &prov)?;

    let mut table = Table::new(&["slope", "slope_stderr", "slope_upper_95", "intercept", "reference_exponent", "theta"]);
    table.push(vec![
        num(result.slope),
        num(result.slope_stderr),
        num(result.slope_upper_95),
        num(result.intercept),
        num(result.reference_exponent),
        num(result.theta),
    ]);
    summary.write(&table, out, "sweep_fit.csv", &prov)?;

    let record = SweepRecord { config_hash: cfg.hash(), seed, result };
    let json = serde_json::to_string_pretty(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
    summary.write_text(out, "sweep.json", &json)?;
    summary.files.extend(write_plot_data(&record, out)?);

    let failed = record.result.rows.iter().filter(|r| r.failure.is_some()).count();
    if failed > 0 {
        summary.notes.push(format!("{failed} rows failed to train and were left out of the fit"));
    }
    summary.checks.extend(sweep_checks(&record.result));
    let text = summary.summary_text(&prov);
    summary.write_text(out, "summary.txt", &text)?;
    Ok(summary)
}

pub fn sweep_checks(result: &SweepResult) -> Vec<Check> {
    let medians: Vec<String> = result.points.iter().map(|p| format!("{:.4}", p.median_excess)).collect();
    vec![
        Check::new("median excess non-increasing in n", result.medians_non_increasing(), format!("medians [{}]", medians.join(", "))),
        // significance is reported, not required: with four n values the t quantile is wide
        Check::new(
            "fitted log-log slope negative",
            result.slope < 0.0,
            format!(
                "slope {:.3} +- {:.3}, 95% upper bound {:.3} ({}), reference exponent {:.3}",
                result.slope,
                result.slope_stderr,
                result.slope_upper_95,
                if result.slope_negative_95() { "significant" } else { "not significant" },
                result.reference_exponent
            ),
        ),
    ]
}

/// `plot.csv`: log n, log median excess with a one-stderr band, the fitted
/// line, and the reference line through the fit at the smallest n.
fn write_plot_data(record: &SweepRecord, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let r = &record.result;
    let Some(first) = r.points.first() else {
        return Err(CliError::Runtime("sweep has no points".into()));
    };
    let x0 = (first.n as f64).ln();
    let fit_at = |x: f64| r.intercept + r.slope * x;
    let mut table = Table::new(&["n", "log_n", "log_excess", "log_excess_lo", "log_excess_hi", "fit_line", "reference_line"]);
    for p in &r.points {
        let x = (p.n as f64).ln();
        let lo = (p.median_excess - p.stderr).max(f64::MIN_POSITIVE);
        table.push(vec![
            p.n.to_string(),
            num(x),
            num(p.median_excess.ln()),
            num(lo.ln()),
            num((p.median_excess + p.stderr).ln()),
            num(fit_at(x)),
            num(fit_at(x0) + r.reference_exponent * (x - x0)),
        ]);
    }
    let path = out.join("plot.csv");
    table.write(&path, &Provenance { config_hash: record.config_hash.clone(), seed: record.seed })?;
    Ok(vec![path])
}

pub fn report(input: &Path, out: &Path) -> Result<Summary, CliError> {
    let path = if input.is_dir() { input.join("sweep.json") } else { input.to_path_buf() };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let record: SweepRecord = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: not a sweep record: {e}", path.display())))?;
    prepare_out(out)?;
    let mut summary = Summary::default();
    summary.files.extend(write_plot_data(&record, out)?);
    summary.checks.extend(sweep_checks(&record.result));
    Ok(summary)
}
