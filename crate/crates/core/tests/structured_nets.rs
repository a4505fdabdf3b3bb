use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simlearn::erm::InitScheme;
use simlearn::gadgets::{build_product_gadget, build_sign_approx, ProductGadget};
use simlearn::relu_net::{DenseLayer, NetworkComplexity, ReluNetwork};
use simlearn::risk::{excess_risk_identity, ConstantMetric};
use simlearn::structured::{aggregate_complexity, pdim_bound, StructuredMetricNet};
use simlearn::synthetic::SyntheticTask;

fn product() -> Arc<ProductGadget> {
    Arc::new(build_product_gadget(1e-2).unwrap())
}

fn random_net(rng: &mut ChaCha8Rng, product: &Arc<ProductGadget>) -> StructuredMetricNet {
    let a = rng.gen_range(0.5..2.0);
    let mut net = StructuredMetricNet::random(2, 2, &[3], product.clone(), a, true, rng).unwrap();
    InitScheme { output_bias: 0.5, output_scale: 1.0 }.initialize(&mut net, rng.gen());
    net
}

fn point(rng: &mut ChaCha8Rng) -> Vec<f64> {
    vec![rng.gen(), rng.gen()]
}

fn with_params(net: &StructuredMetricNet, params: &[f64]) -> StructuredMetricNet {
    let mut out = net.clone();
    out.set_params(params).unwrap();
    out
}

#[test]
fn backward_matches_central_differences() {
    const STEP: f64 = 1e-5;
    const REL_TOL: f64 = 1e-5;
    let product = product();
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut checked = 0;
    let mut resampled = 0;
    while checked < 20 {
        let net = random_net(&mut rng, &product);
        let (x, xp) = (point(&mut rng), point(&mut rng));
        let (_, grads) = net.backward(&x, &xp).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.flatten()).collect();
        let norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        // a saturated head has zero gradient and checks nothing
        if norm < 1e-6 {
            resampled += 1;
            continue;
        }
        let base_sig = net.activation_signature(&x, &xp).unwrap();
        let params = net.params();
        let mut numeric = Vec::with_capacity(params.len());
        let mut kink = false;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += STEP;
            let plus = with_params(&net, &p);
            p[k] -= 2.0 * STEP;
            let minus = with_params(&net, &p);
            if plus.activation_signature(&x, &xp).unwrap() != base_sig
                || minus.activation_signature(&x, &xp).unwrap() != base_sig
            {
                kink = true;
                break;
            }
            numeric.push((plus.evaluate(&x, &xp).unwrap() - minus.evaluate(&x, &xp).unwrap()) / (2.0 * STEP));
        }
        if kink {
            resampled += 1;
            continue;
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= REL_TOL * norm, "net {checked}: |fd - backward| = {diff:e}, |backward| = {norm:e}");
        checked += 1;
    }
    assert!(resampled < 200, "too many resamples: {resampled}");
}

/// Hand count for p = 1, m = 2, sub-networks 1 -> 2 -> 1 with no zero
/// entries, no clamp, product gadget at eps = 1e-2:
///   sub-network: L 2, W 2*1 + 2 + 1*2 + 1 = 7, U 2 + 1 = 3
///   F_a:         L 2, W 2 + 2 + 2 + 1 = 7,     U 3
///   phi:         (8, 275, 79)
///   glue:        W 3m + 1 = 7, U 1
///   total L = 2 + 8 + 2 = 12
///   total W = 2*(7 + 7) + 2*275 + 7 + 7 = 592
///   total U = 2*(3 + 3) + 2*79 + 3 + 1 = 174
#[test]
fn complexity_hand_count_for_two_subnets() {
    let product = product();
    assert_eq!(product.complexity(), NetworkComplexity::new(8, 275, 79));
    let sub = |s: f64| {
        ReluNetwork::new(
            1,
            vec![
                DenseLayer::new(2, 1, vec![1.0 * s, -2.0], vec![0.5, 1.0]).unwrap(),
                DenseLayer::new(1, 2, vec![0.7, -0.3], vec![0.2]).unwrap(),
            ],
            false,
        )
        .unwrap()
    };
    let sign = build_sign_approx(0.3).unwrap();
    assert_eq!(sign.complexity(), NetworkComplexity::new(2, 7, 3));
    let net = StructuredMetricNet::new(vec![sub(1.0), sub(-1.5)], product, sign, false).unwrap();
    assert_eq!(net.complexity_breakdown().subnets[0], NetworkComplexity::new(2, 7, 3));
    assert_eq!(aggregate_complexity(&net), NetworkComplexity::new(12, 592, 174));
}

#[test]
fn pdim_bound_arithmetic() {
    assert_eq!(pdim_bound(&NetworkComplexity::new(4, 100, 16), 1.0).unwrap(), 1600.0);
    assert_eq!(pdim_bound(&NetworkComplexity::new(3, 10, 2), 2.0).unwrap(), 60.0);
    assert!(pdim_bound(&NetworkComplexity::new(3, 10, 1), 1.0).is_err());
}

#[test]
fn manifest_round_trip_is_bit_identical() {
    let product = product();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for clamp in [false, true] {
        let mut net = StructuredMetricNet::random(3, 2, &[4, 3], product.clone(), 0.25, clamp, &mut rng).unwrap();
        InitScheme::default().initialize(&mut net, 17);
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        let back = StructuredMetricNet::load(dir.path()).unwrap();
        assert_eq!(back.params(), net.params());
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let xp: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let (u, v) = (net.evaluate(&x, &xp).unwrap(), back.evaluate(&x, &xp).unwrap());
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn manifest_rejects_unknown_keys() {
    let net = StructuredMetricNet::random(1, 1, &[2], product(), 0.5, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    net.save(dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replacen('{', "{\"extra\": 1,", 1);
    std::fs::write(&path, text).unwrap();
    assert!(StructuredMetricNet::load(dir.path()).is_err());
}

/// Sub-network `i` is a steep ramp equal to 1 on one side of x = 1/2 and 0 on
/// the other, so `sum phi` is about 1 for same-side pairs and 0 otherwise.
fn ramp_net(width: f64, a: f64) -> StructuredMetricNet {
    let k = 1.0 / (2.0 * width);
    let ramp = |down: bool| {
        // 1 - clamp01(k (x - 1/2 + width)) or its mirror
        let (w, b) = if down { (k, -k * (0.5 - width)) } else { (-k, k * (0.5 + width)) };
        ReluNetwork::new(
            1,
            vec![
                DenseLayer::new(2, 1, vec![w, w], vec![b, b - 1.0]).unwrap(),
                DenseLayer::new(1, 2, vec![-1.0, 1.0], vec![1.0]).unwrap(),
            ],
            false,
        )
        .unwrap()
    };
    StructuredMetricNet::new(vec![ramp(true), ramp(false)], product(), build_sign_approx(a).unwrap(), true).unwrap()
}

#[test]
fn hand_built_ramps_approach_the_true_metric() {
    let task = SyntheticTask::builtin_1d(3);
    let net = ramp_net(1e-4, 0.25);
    assert!((net.evaluate(&[0.1], &[0.2]).unwrap() + 1.0).abs() < 1e-12);
    assert!((net.evaluate(&[0.1], &[0.9]).unwrap() - 1.0).abs() < 1e-12);
    let excess = excess_risk_identity(&net, &task, 100_000, 8).unwrap();
    let trivial = excess_risk_identity(&ConstantMetric { input_dim: 1, value: -1.0 }, &task, 100_000, 8).unwrap();
    assert!(excess.mean < 1e-3, "excess {excess:?}");
    assert!(trivial.mean > 0.03, "constant metric excess {trivial:?}");
}
