use simlearn::synthetic::{ConditionalModel, PiecewiseModel, Segment, SyntheticTask};

fn linear_task(seed: u64) -> SyntheticTask {
    let model = PiecewiseModel::linear(1, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
    SyntheticTask::conditional(ConditionalModel::Piecewise(model), seed).unwrap()
}

// Near-linear noise mass: constant law on [0, 0.9), a linear ramp on [0.9, 1].
fn ramp_task(seed: u64) -> SyntheticTask {
    let model = PiecewiseModel::new(
        1,
        2,
        vec![
            Segment { start: 0.0, end: 0.9, from: vec![1.0, 0.0], to: vec![1.0, 0.0] },
            Segment { start: 0.9, end: 1.0, from: vec![0.0, 1.0], to: vec![1.0, 0.0] },
        ],
    )
    .unwrap();
    SyntheticTask::conditional(ConditionalModel::Piecewise(model), seed).unwrap()
}

fn midpoint_bayes_oracle(grid: usize) -> f64 {
    let h = 1.0 / grid as f64;
    let mut total = 0.0;
    for i in 0..grid {
        let x = (i as f64 + 0.5) * h;
        for j in 0..grid {
            let xp = (j as f64 + 0.5) * h;
            let eta = x * xp + (1.0 - x) * (1.0 - xp);
            total += 2.0 * eta.min(1.0 - eta);
        }
    }
    total * h * h
}

// Frozen from midpoint_bayes_oracle(1000).
const LINEAR_BAYES: f64 = 0.75;

#[test]
fn linear_model_bayes_risk_matches_quadrature() {
    assert!((midpoint_bayes_oracle(1000) - LINEAR_BAYES).abs() < 1e-6);
    let est = linear_task(0).bayes_risk_hinge(400_000, 17).unwrap();
    assert!((est.mean - LINEAR_BAYES).abs() <= 3.0 * est.stderr, "{est:?}");
}

#[test]
fn label_frequency_matches_binomial() {
    let model = PiecewiseModel::constant(2, vec![0.3, 0.7]).unwrap();
    let task = SyntheticTask::conditional(ConditionalModel::Piecewise(model), 42).unwrap();
    let n = 100_000;
    let data = task.sample_dataset(n).unwrap();
    let freq = data.samples.iter().filter(|s| s.y == 0).count() as f64 / n as f64;
    let se = (0.3 * 0.7 / n as f64).sqrt();
    assert!((freq - 0.3).abs() <= 3.0 * se, "freq {freq}");
    assert!(data.samples.iter().all(|s| s.x.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn same_seed_same_dataset() {
    let task = SyntheticTask::builtin_1d(7);
    assert_eq!(task.sample_dataset(500).unwrap(), task.sample_dataset(500).unwrap());
    assert_ne!(task.sample_dataset(500).unwrap(), task.with_seed(8).sample_dataset(500).unwrap());
}

#[test]
fn ramp_model_noise_exponent_near_one() {
    let grid = [0.005, 0.01, 0.02, 0.04, 0.08, 0.16];
    let fit = ramp_task(0).estimate_noise_exponent(1_000_000, &grid, 5).unwrap();
    assert!((fit.theta - 1.0).abs() <= 0.15, "theta {}", fit.theta);
    assert!(fit.theta_conservative <= fit.theta);
    let doubled = ramp_task(0).estimate_noise_exponent(2_000_000, &grid, 6).unwrap();
    assert!((doubled.theta - fit.theta).abs() <= 2.0 * fit.theta_stderr.max(doubled.theta_stderr));
}

#[test]
fn builtin_noise_fit_runs_below_saturation() {
    let grid = [0.001, 0.002, 0.005, 0.01, 0.02];
    let fit = SyntheticTask::builtin_1d(0).estimate_noise_exponent(200_000, &grid, 1).unwrap();
    assert!(fit.theta > 0.0 && fit.theta.is_finite());
    assert!(fit.c_theta_conservative > 0.0);
}

#[test]
fn duplicated_laws_give_equal_eta() {
    let model = PiecewiseModel::two_level(1, 0.5, vec![0.6, 0.2, 0.2], vec![0.6, 0.2, 0.2]).unwrap();
    let task = SyntheticTask::conditional(ConditionalModel::Piecewise(model), 0).unwrap();
    let a = task.eta(&[0.9], &[0.1]).unwrap();
    let b = task.eta(&[0.9], &[0.7]).unwrap();
    assert_eq!(a, b);
}
