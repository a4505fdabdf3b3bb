use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simlearn::loss::{
    check_bias_shift, check_monotone, check_self_distance, linspace, minimize_q, q_value, tstar_oracle, HingeConvention,
    LossFunction, OracleGrid,
};

fn interior_grid() -> Vec<f64> {
    linspace(0.01, 0.99, 101)
}

#[test]
fn hinge_identities_on_eta_grid() {
    let grid = OracleGrid::default();
    for eta in interior_grid() {
        let m = minimize_q(LossFunction::Hinge, eta, &grid).unwrap();
        let expected = LossFunction::Hinge.tstar_analytic(eta, HingeConvention::Infimum).unwrap().unwrap();
        assert!((m.tstar - expected).abs() <= grid.tolerance(), "eta {eta}: {}", m.tstar);
        assert!((m.q_min - 2.0 * eta.min(1.0 - eta)).abs() <= 1e-9);
    }
}

#[test]
fn all_losses_monotone_and_match_closed_forms() {
    let grid = OracleGrid::default();
    for loss in LossFunction::ALL {
        let profile = check_monotone(loss, &interior_grid(), &grid).unwrap();
        assert!(profile.is_monotone(), "{loss:?}: {:?}", profile.violations);
        assert!(profile.max_analytic_gap() <= 2e-6, "{loss:?}: {}", profile.max_analytic_gap());
    }
}

#[test]
fn oracle_matches_closed_forms_on_twentieths() {
    let grid = OracleGrid::default();
    for loss in [LossFunction::Logistic, LossFunction::Exponential, LossFunction::ModifiedLeastSquares] {
        for k in 1..=19 {
            let eta = k as f64 * 0.05;
            let o = tstar_oracle(loss, eta, &grid).unwrap();
            let a = loss.tstar_analytic(eta, HingeConvention::Infimum).unwrap().unwrap();
            assert!((o - a).abs() <= grid.tolerance(), "{loss:?} eta {eta}: {o} vs {a}");
        }
    }
}

#[test]
fn bias_is_a_pure_shift() {
    let grid = OracleGrid::default();
    for loss in LossFunction::ALL {
        for b in [0.5, 1.0] {
            for k in 1..=9 {
                let r = check_bias_shift(loss, k as f64 / 10.0, b, &grid).unwrap();
                assert!(r.gap <= 2e-6, "{loss:?} b {b} eta {}: gap {}", k as f64 / 10.0, r.gap);
            }
        }
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn self_distance_never_violated_when_precondition_holds() {
    let grid = OracleGrid { lo: -3.0, hi: 3.0, ..OracleGrid::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut held = 0;
    for _ in 0..1000 {
        let a = random_simplex(&mut rng, 3);
        let b = random_simplex(&mut rng, 3);
        let r = check_self_distance(LossFunction::Hinge, &a, &b, &grid).unwrap();
        assert!(!r.is_violation(), "{a:?} {b:?} {r:?}");
        held += r.precondition as usize;
    }
    assert!(held > 0);
}

#[test]
fn q_symmetric_in_pair_order() {
    let pa = [0.2, 0.5, 0.3];
    let pb = [0.6, 0.1, 0.3];
    let eta_ab: f64 = pa.iter().zip(&pb).map(|(u, v)| u * v).sum();
    let eta_ba: f64 = pb.iter().zip(&pa).map(|(u, v)| u * v).sum();
    for loss in LossFunction::ALL {
        for t in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(q_value(loss, eta_ab, t).unwrap(), q_value(loss, eta_ba, t).unwrap());
        }
    }
}
