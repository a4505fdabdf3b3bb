//! Hand-built ReLU networks: sawtooth iterates, the squaring approximant,
//! the product gadget on `[-1, 2]^2`, the sign approximator `F_a`, and the
//! interval clamp.
//!
//! The product gadget uses the polarization identity
//! `xy = ((x + y)^2 - x^2 - y^2) / 2` with every square taken of `|u| / 4`,
//! which keeps the squaring inputs in `[0, 1]` on the whole domain. Because
//! the `x + y` and `y` branches are identical sub-networks, `phi(0, y)`
//! cancels to zero up to floating-point summation order.

use std::collections::BTreeMap;

use serde_json::json;

use crate::error::{Error, Result};
use crate::relu_net::{DenseLayer, ModelFile, NetworkComplexity, ReluNetwork};

/// Half-width scale: squares are taken of `|u| / (2 M)`.
const PRODUCT_SCALE: f64 = 2.0;
pub const DOMAIN_LO: f64 = -1.0;
pub const DOMAIN_HI: f64 = 2.0;
pub const CERTIFICATION_GRID: usize = 401;
/// Absolute tolerance for the zero-on-axes and symmetry certificates.
pub const AXIS_TOLERANCE: f64 = 1e-12;

/// `g(x) = 2 sigma(x) - 4 sigma(x - 1/2) + 2 sigma(x - 1)`.
const HAT_COMBINATION: [f64; 3] = [2.0, -4.0, 2.0];
const HAT_BIAS: [f64; 3] = [0.0, -0.5, -1.0];

/// `s`-fold composition of the hat function, `s + 1` layers (`s` ReLU
/// layers of width 3 and an affine read-out). `g_s` has `2^(s-1)` teeth on `[0, 1]`.
pub fn build_hat_iterate(s: usize) -> Result<ReluNetwork> {
    if s == 0 {
        return Err(Error::Parameter("hat iterate needs s >= 1".into()));
    }
    let mut layers = vec![DenseLayer::new(3, 1, vec![1.0; 3], HAT_BIAS.to_vec())?];
    for _ in 1..s {
        let rows: Vec<Vec<f64>> = (0..3).map(|_| HAT_COMBINATION.to_vec()).collect();
        layers.push(DenseLayer::from_rows(&rows, HAT_BIAS.to_vec())?);
    }
    layers.push(DenseLayer::from_rows(&[HAT_COMBINATION.to_vec()], vec![0.0])?);
    ReluNetwork::new(1, layers, false)
}

/// Row of the running accumulator `acc_k = acc_{k-1} - g_k / 4^k` over the
/// unit block `[acc, h1, h2, h3]`.
fn accumulator_row(k: usize) -> [f64; 4] {
    let scale = 0.25f64.powi(k as i32);
    [1.0, -HAT_COMBINATION[0] * scale, -HAT_COMBINATION[1] * scale, -HAT_COMBINATION[2] * scale]
}

/// Rows of the 4x4 layer advancing one squaring block from stage `k` to `k + 1`.
fn square_stage_rows(k: usize) -> ([[f64; 4]; 4], [f64; 4]) {
    let hat = [0.0, HAT_COMBINATION[0], HAT_COMBINATION[1], HAT_COMBINATION[2]];
    ([accumulator_row(k), hat, hat, hat], [0.0, HAT_BIAS[0], HAT_BIAS[1], HAT_BIAS[2]])
}

/// `sq_s(x) = x - sum_{k=1..s} g_k(x) / 4^k`, with `|sq_s(x) - x^2| <= 2^(-2s-2)` on `[0, 1]`.
///
/// Every hidden layer carries the block `[acc, h1, h2, h3]`; the accumulator
/// stays nonnegative on `[0, 1]` because `sq_k(x) >= x^2`.
pub fn build_square_gadget(s: usize) -> Result<ReluNetwork> {
    if s == 0 {
        return Err(Error::Parameter("square gadget needs s >= 1".into()));
    }
    let mut layers = vec![DenseLayer::new(4, 1, vec![1.0; 4], vec![0.0, HAT_BIAS[0], HAT_BIAS[1], HAT_BIAS[2]])?];
    for k in 1..s {
        let (rows, bias) = square_stage_rows(k);
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        layers.push(DenseLayer::from_rows(&rows, bias.to_vec())?);
    }
    layers.push(DenseLayer::from_rows(&[accumulator_row(s).to_vec()], vec![0.0])?);
    ReluNetwork::new(1, layers, false)
}

/// Smallest sawtooth depth with `3 * 2M^2 * 2^(-2s-2) <= eps / 2`, i.e.
/// `s = ceil((log2(48 / eps) - 2) / 2)`.
pub fn product_sawtooth_depth(eps: f64) -> usize {
    let s = (((48.0 / eps).log2() - 2.0) / 2.0).ceil();
    (s.max(1.0)) as usize
}

/// Build-time certificate of a [`ProductGadget`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProductCertificate {
    /// Max of `|phi(x, y) - xy|` over the certification grid.
    pub grid_error: f64,
    /// Max of `|phi(x, 0)|, |phi(0, y)|` over grid coordinates.
    pub axis_error: f64,
    /// Max of `|phi(x, y) - phi(y, x)|` over the grid.
    pub symmetry_error: f64,
    pub complexity: NetworkComplexity,
    /// Smallest `C` with depth, weights and units all `<= C ln(1/eps)`.
    pub log_constant: f64,
}

/// ReLU network `phi` with `|phi(x, y) - xy| <= eps` on `[-1, 2]^2` and
/// `phi(x, y) = 0` whenever `xy = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductGadget {
    net: ReluNetwork,
    epsilon: f64,
    sawtooth_depth: usize,
    certificate: ProductCertificate,
}

impl ProductGadget {
    /// Universal constant bounding the depth by `C ln(1/eps)` for every `eps in (0, 1/2)`.
    pub const DEPTH_LOG_CONSTANT: f64 = 10.0;
    /// Universal constant bounding nonzero weights and units by `C ln(1/eps)`.
    pub const SIZE_LOG_CONSTANT: f64 = 300.0;

    pub fn net(&self) -> &ReluNetwork {
        &self.net
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sawtooth_depth(&self) -> usize {
        self.sawtooth_depth
    }

    pub fn certificate(&self) -> &ProductCertificate {
        &self.certificate
    }

    pub fn complexity(&self) -> NetworkComplexity {
        self.certificate.complexity
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.net.forward_scalar_unchecked(&[x, y])
    }

    /// `(phi(x, y), d phi / dx, d phi / dy)`.
    pub(crate) fn eval_with_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (v, g) = self.net.value_and_input_grad(&[x, y]);
        (v, g[0], g[1])
    }

    pub fn to_model_file(&self) -> ModelFile {
        let c = &self.certificate;
        let mut meta = BTreeMap::new();
        meta.insert("gadget".to_string(), json!("product"));
        meta.insert("epsilon".to_string(), json!(self.epsilon));
        meta.insert("sawtooth_depth".to_string(), json!(self.sawtooth_depth));
        meta.insert("certified_grid_error".to_string(), json!(c.grid_error));
        meta.insert("certified_axis_error".to_string(), json!(c.axis_error));
        meta.insert("log_constant".to_string(), json!(c.log_constant));
        meta.insert(
            "complexity".to_string(),
            json!([c.complexity.depth, c.complexity.nonzero_weights, c.complexity.units]),
        );
        self.net.to_model_file(Some(&meta))
    }
}

fn product_network(s: usize) -> Result<ReluNetwork> {
    // Layer 1: |x + y|, |x|, |y| split into positive and negative parts.
    let first = DenseLayer::from_rows(
        &[
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ],
        vec![0.0; 6],
    )?;
    let inv = 1.0 / (2.0 * PRODUCT_SCALE);
    let block_bias = [0.0, HAT_BIAS[0], HAT_BIAS[1], HAT_BIAS[2]];

    // Layer 2: first stage of three squaring blocks, input |u| / (2M).
    let mut rows = Vec::with_capacity(12);
    let mut bias = Vec::with_capacity(12);
    for b in 0..3 {
        for unit_bias in block_bias {
            let mut row = vec![0.0; 6];
            row[2 * b] = inv;
            row[2 * b + 1] = inv;
            rows.push(row);
            bias.push(unit_bias);
        }
    }
    let mut layers = vec![first, DenseLayer::from_rows(&rows, bias)?];

    // Block-diagonal stages.
    for k in 1..s {
        let (stage, stage_bias) = square_stage_rows(k);
        let mut rows = Vec::with_capacity(12);
        let mut bias = Vec::with_capacity(12);
        for b in 0..3 {
            for (r, unit_bias) in stage.iter().zip(stage_bias) {
                let mut row = vec![0.0; 12];
                row[4 * b..4 * b + 4].copy_from_slice(r);
                rows.push(row);
                bias.push(unit_bias);
            }
        }
        layers.push(DenseLayer::from_rows(&rows, bias)?);
    }

    // Read-out: 2M^2 (sq(|x+y|/2M) - sq(|x|/2M) - sq(|y|/2M)).
    let outer = 2.0 * PRODUCT_SCALE * PRODUCT_SCALE;
    let acc = accumulator_row(s);
    let mut row = Vec::with_capacity(12);
    for sign in [1.0, -1.0, -1.0] {
        row.extend(acc.iter().map(|w| sign * outer * w));
    }
    layers.push(DenseLayer::from_rows(&[row], vec![0.0])?);
    ReluNetwork::new(2, layers, false)
}

fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|i| DOMAIN_LO + (DOMAIN_HI - DOMAIN_LO) * i as f64 / (n - 1) as f64).collect()
}

/// Builds the product gadget for accuracy `eps in (0, 1/2)` and certifies it
/// on the 401 x 401 grid over `[-1, 2]^2`.
pub fn build_product_gadget(eps: f64) -> Result<ProductGadget> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Parameter(format!("product accuracy must lie in (0, 1/2), got {eps}")));
    }
    let s = product_sawtooth_depth(eps);
    let net = product_network(s)?;
    let grid = grid_points(CERTIFICATION_GRID);

    let mut values = vec![0.0; grid.len() * grid.len()];
    let mut grid_error: f64 = 0.0;
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            let v = net.forward_unchecked(&[x, y])[0];
            values[i * grid.len() + j] = v;
            grid_error = grid_error.max((v - x * y).abs());
        }
    }
    let mut symmetry_error: f64 = 0.0;
    for i in 0..grid.len() {
        for j in 0..i {
            symmetry_error = symmetry_error.max((values[i * grid.len() + j] - values[j * grid.len() + i]).abs());
        }
    }
    let mut axis_error: f64 = 0.0;
    for &t in &grid {
        axis_error = axis_error.max(net.forward_unchecked(&[t, 0.0])[0].abs());
        axis_error = axis_error.max(net.forward_unchecked(&[0.0, t])[0].abs());
    }

    let complexity = net.complexity();
    let log_inv = (1.0 / eps).ln();
    let largest = complexity.depth.max(complexity.nonzero_weights).max(complexity.units) as f64;
    let certificate = ProductCertificate {
        grid_error,
        axis_error,
        symmetry_error,
        complexity,
        log_constant: largest / log_inv,
    };

    if grid_error > eps {
        return Err(Error::Certification(format!("grid error {grid_error:e} exceeds eps {eps:e}")));
    }
    if axis_error > AXIS_TOLERANCE {
        return Err(Error::Certification(format!("phi not zero on the axes: {axis_error:e}")));
    }
    if symmetry_error > AXIS_TOLERANCE {
        return Err(Error::Certification(format!("phi not symmetric: {symmetry_error:e}")));
    }
    if complexity.depth as f64 > ProductGadget::DEPTH_LOG_CONSTANT * log_inv
        || largest > ProductGadget::SIZE_LOG_CONSTANT * log_inv
    {
        return Err(Error::Certification(format!("complexity {complexity} exceeds the logarithmic budget")));
    }

    Ok(ProductGadget { net, epsilon: eps, sawtooth_depth: s, certificate })
}

/// `F_a(t) = (sigma(t + a) - sigma(t - a) - a) / a` as a two-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct SignApprox {
    a: f64,
    net: ReluNetwork,
}

impl SignApprox {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn net(&self) -> &ReluNetwork {
        &self.net
    }

    /// Network output cut back onto `[-1, 1]`; saturated values can
    /// overshoot by a few ulps in floating point.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.net.forward_scalar_unchecked(&[t]).clamp(-1.0, 1.0)
    }

    /// `(F_a(t), F_a'(t))` with `sigma'(0) = 0`.
    pub(crate) fn eval_with_grad(&self, t: f64) -> (f64, f64) {
        let (v, g) = self.net.value_and_input_grad(&[t]);
        (v.clamp(-1.0, 1.0), g[0])
    }

    pub fn complexity(&self) -> NetworkComplexity {
        self.net.complexity()
    }

    pub fn to_model_file(&self) -> ModelFile {
        let c = self.complexity();
        let mut meta = BTreeMap::new();
        meta.insert("gadget".to_string(), json!("sign"));
        meta.insert("a".to_string(), json!(self.a));
        meta.insert("complexity".to_string(), json!([c.depth, c.nonzero_weights, c.units]));
        self.net.to_model_file(Some(&meta))
    }
}

pub fn build_sign_approx(a: f64) -> Result<SignApprox> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Parameter(format!("sign approximator needs a > 0, got {a}")));
    }
    let hidden = DenseLayer::new(2, 1, vec![1.0, 1.0], vec![a, -a])?;
    let out = DenseLayer::new(1, 2, vec![1.0 / a, -1.0 / a], vec![-1.0])?;
    Ok(SignApprox { a, net: ReluNetwork::new(1, vec![hidden, out], false)? })
}

/// `v -> min(max(v, lo), hi)` as `sigma(v - lo) - sigma(v - hi) + lo`.
pub fn build_clamp(lo: f64, hi: f64) -> Result<ReluNetwork> {
    if !(lo < hi) {
        return Err(Error::Parameter(format!("clamp needs lo < hi, got [{lo}, {hi}]")));
    }
    let hidden = DenseLayer::new(2, 1, vec![1.0, 1.0], vec![-lo, -hi])?;
    let out = DenseLayer::new(1, 2, vec![1.0, -1.0], vec![lo])?;
    ReluNetwork::new(1, vec![hidden, out], false)
}

/// Clamp onto the product gadget's domain `[-1, 2]`.
pub fn build_domain_clamp() -> Result<ReluNetwork> {
    build_clamp(DOMAIN_LO, DOMAIN_HI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(net: &ReluNetwork, x: f64) -> f64 {
        net.forward(&[x]).unwrap()[0]
    }

    #[test]
    fn hat_single() {
        let g = build_hat_iterate(1).unwrap();
        assert_eq!(eval1(&g, 0.5), 1.0);
        assert_eq!(eval1(&g, 0.0), 0.0);
        assert_eq!(eval1(&g, 1.0), 0.0);
    }

    #[test]
    fn hat_twice() {
        let g2 = build_hat_iterate(2).unwrap();
        assert_eq!(eval1(&g2, 0.25), 1.0);
        assert_eq!(eval1(&g2, 0.5), 0.0);
    }

    #[test]
    fn hat_three_alternates_on_eighths() {
        let g3 = build_hat_iterate(3).unwrap();
        for k in 0..=8 {
            let want = if k % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(eval1(&g3, k as f64 / 8.0), want, "k = {k}");
        }
        // period 1/4
        for i in 0..100 {
            let x = 0.75 * i as f64 / 100.0;
            assert!((eval1(&g3, x) - eval1(&g3, x + 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_depth_rejected() {
        assert!(matches!(build_hat_iterate(0), Err(Error::Parameter(_))));
        assert!(matches!(build_square_gadget(0), Err(Error::Parameter(_))));
    }

    #[test]
    fn square_endpoints_exact() {
        for s in 1..=8 {
            let sq = build_square_gadget(s).unwrap();
            assert_eq!(eval1(&sq, 0.0), 0.0);
            assert_eq!(eval1(&sq, 1.0), 1.0);
        }
    }

    #[test]
    fn square_error_bound_s4() {
        let sq = build_square_gadget(4).unwrap();
        let worst = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .map(|x| (eval1(&sq, x) - x * x).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2f64.powi(-10), "worst = {worst}");
    }

    #[test]
    fn sawtooth_depth_closed_form() {
        // 24 * 2^(-2s-2) <= eps / 2
        for eps in [0.4, 0.1, 1e-2, 1e-3, 1e-5] {
            let s = product_sawtooth_depth(eps);
            assert!(24.0 * 2f64.powi(-2 * s as i32 - 2) <= eps / 2.0);
            if s > 1 {
                assert!(24.0 * 2f64.powi(-2 * (s as i32 - 1) - 2) > eps / 2.0);
            }
        }
    }

    #[test]
    fn product_axes_and_accuracy() {
        let phi = build_product_gadget(1e-2).unwrap();
        for y in [-1.0, 0.37, 2.0] {
            assert!(phi.eval(0.0, y).abs() <= 1e-12);
            assert!(phi.eval(y, 0.0).abs() <= 1e-12);
        }
        assert!((phi.eval(0.5, 0.5) - 0.25).abs() <= 1e-2);
        assert!(phi.certificate().grid_error <= 1e-2);
    }

    #[test]
    fn product_rejects_bad_eps() {
        for eps in [0.0, 0.5, 0.6, -1.0, f64::NAN] {
            assert!(matches!(build_product_gadget(eps), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn sign_approx_values() {
        let f = build_sign_approx(0.1).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(-0.5), -1.0);
        assert_eq!(f.eval(0.0), 0.0);
        let f = build_sign_approx(0.2).unwrap();
        assert!((f.eval(0.1) - 0.5).abs() <= 1e-12);
        assert!(build_sign_approx(0.0).is_err());
        assert!(build_sign_approx(-1.0).is_err());
    }

    #[test]
    fn sign_approx_complexity() {
        let f = build_sign_approx(0.3).unwrap();
        assert_eq!(f.complexity(), NetworkComplexity::new(2, 7, 3));
    }

    #[test]
    fn clamp_values() {
        let c = build_domain_clamp().unwrap();
        assert_eq!(eval1(&c, -3.0), -1.0);
        assert_eq!(eval1(&c, 5.0), 2.0);
        assert_eq!(eval1(&c, 0.0), 0.0);
        assert_eq!(eval1(&c, 1.0), 1.0);
        assert!((eval1(&c, 0.3) - 0.3).abs() < 1e-15);
    }
}
