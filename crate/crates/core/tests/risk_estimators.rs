use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simlearn::erm::InitScheme;
use simlearn::gadgets::build_product_gadget;
use simlearn::loss::LossFunction;
use simlearn::risk::{default_sweep_config, generalization_risk, rate_sweep, risk_report, SweepResult, TrueMetric};
use simlearn::structured::StructuredMetricNet;
use simlearn::synthetic::SyntheticTask;

#[test]
fn doubling_pairs_shrinks_stderr_by_root_two() {
    let task = SyntheticTask::builtin_1d(0);
    let product = Arc::new(build_product_gadget(1e-2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = StructuredMetricNet::random(1, 2, &[2], product, 0.3, true, &mut rng).unwrap();
    InitScheme::default().initialize(&mut net, 4);
    for seed in 0..5 {
        let small = generalization_risk(&net, &task, LossFunction::Hinge, 20_000, seed).unwrap();
        let large = generalization_risk(&net, &task, LossFunction::Hinge, 40_000, seed + 100).unwrap();
        let ratio = large.stderr / small.stderr;
        assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

#[test]
fn excess_estimators_agree_on_random_nets() {
    let task = SyntheticTask::builtin_1d(0);
    let product = Arc::new(build_product_gadget(1e-2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut disagreements = 0;
    for k in 0..50 {
        let a = rng.gen_range(0.05..1.0);
        let mut net = StructuredMetricNet::random(1, 2, &[2], product.clone(), a, true, &mut rng).unwrap();
        InitScheme { output_bias: rng.gen_range(0.0..0.8), output_scale: 1.0 }.initialize(&mut net, rng.gen());
        let report = risk_report(&net, &task, 20_000, k).unwrap();
        assert!(report.excess_nonnegative(), "net {k}: {report:?}");
        if !report.estimators_agree() {
            disagreements += 1;
        }
    }
    // 3-sigma bands: a miss on one net in fifty is expected noise
    assert!(disagreements <= 1, "{disagreements} of 50 nets disagree");
}

#[test]
fn true_metric_risk_equals_bayes_expression() {
    let task = SyntheticTask::builtin_1d(0);
    let report = risk_report(&TrueMetric(&task), &task, 50_000, 9).unwrap();
    assert!(report.excess_direct.abs() < 1e-12);
    assert!(report.excess_identity.abs() < 1e-12);
    assert!((report.risk - report.bayes_risk).abs() <= 3.0 * report.risk_stderr.hypot(report.bayes_stderr) + 1e-12);
}

fn tiny_sweep() -> SweepResult {
    let task = SyntheticTask::builtin_1d(0);
    let product = Arc::new(build_product_gadget(1e-2).unwrap());
    let mut cfg = default_sweep_config(vec![16, 32, 64, 128], vec![1, 2, 3], 0.8);
    cfg.train.epochs = 3;
    cfg.anneal_epochs = 2;
    cfg.restarts = 2;
    cfg.mc_pairs = 2000;
    let mut result = rate_sweep(&task, product, &cfg).unwrap();
    result.rows.iter_mut().for_each(|r| r.wall_seconds = 0.0);
    result
}

#[test]
fn rate_sweep_is_reproducible() {
    let (first, second) = (tiny_sweep(), tiny_sweep());
    assert_eq!(first.rows.len(), 12);
    assert_eq!(first, second);
}
