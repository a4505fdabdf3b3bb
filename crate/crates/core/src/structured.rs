//! The structured metric network
//! `d(x, x') = F_a(1 - 2 sum_i phi(h_i(x), h_i(x')))`, its complexity
//! accounting and on-disk manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadgets::{build_domain_clamp, build_product_gadget, build_sign_approx, ProductGadget, SignApprox};
use crate::relu_net::{Gradients, NetworkComplexity, ReluNetwork};

pub const MANIFEST_FORMAT: &str = "simlearn-structured-metric";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Any real-valued function of an input pair.
pub trait PairFunction: Sync {
    fn input_dim(&self) -> usize;
    fn value(&self, x: &[f64], x_prime: &[f64]) -> f64;
}

/// Component-wise upper bound on `(L, W, U)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisBudget {
    pub max_depth: usize,
    pub max_weights: usize,
    pub max_units: usize,
}

impl HypothesisBudget {
    pub fn new(max_depth: usize, max_weights: usize, max_units: usize) -> Self {
        Self { max_depth, max_weights, max_units }
    }

    pub fn admits(&self, c: &NetworkComplexity) -> bool {
        c.depth <= self.max_depth && c.nonzero_weights <= self.max_weights && c.units <= self.max_units
    }

    pub fn check(&self, c: &NetworkComplexity) -> Result<()> {
        if self.admits(c) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "complexity {c} exceeds budget (L={}, W={}, U={})",
                self.max_depth, self.max_weights, self.max_units
            )))
        }
    }
}

/// Every term of the aggregated complexity, so the total can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBreakdown {
    pub subnets: Vec<NetworkComplexity>,
    /// One clamp copy; charged `2m` times when present.
    pub clamp: Option<NetworkComplexity>,
    /// One product copy; charged `m` times.
    pub product: NetworkComplexity,
    pub sign: NetworkComplexity,
    /// Wiring added by the assembly: `2m` routing weights into the product
    /// copies, `m` weights and one bias for `t -> 1 - 2t`, and one summation unit.
    pub glue: NetworkComplexity,
    pub total: NetworkComplexity,
}

/// `F_a(1 - 2 sum_i phi(c(h_i(x)), c(h_i(x'))))` with `c` the optional clamp onto `[-1, 2]`.
#[derive(Debug, Clone)]
pub struct StructuredMetricNet {
    input_dim: usize,
    subnets: Vec<ReluNetwork>,
    product: Arc<ProductGadget>,
    sign: SignApprox,
    clamp: Option<ReluNetwork>,
}

impl PartialEq for StructuredMetricNet {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.subnets == other.subnets
            && self.product.epsilon() == other.product.epsilon()
            && self.sign.a() == other.sign.a()
            && self.clamp.is_some() == other.clamp.is_some()
    }
}

impl StructuredMetricNet {
    pub fn new(
        subnets: Vec<ReluNetwork>,
        product: Arc<ProductGadget>,
        sign: SignApprox,
        clamp_subnet_output: bool,
    ) -> Result<Self> {
        let first = subnets.first().ok_or_else(|| Error::Parameter("need at least one sub-network".into()))?;
        let input_dim = first.input_dim();
        let depth = first.depth();
        for h in &subnets {
            if h.input_dim() != input_dim {
                return Err(Error::Shape { expected: input_dim, got: h.input_dim() });
            }
            if h.output_dim() != 1 {
                return Err(Error::Shape { expected: 1, got: h.output_dim() });
            }
            if h.depth() != depth {
                return Err(Error::Parameter(format!(
                    "sub-networks must share one depth ({} vs {depth})",
                    h.depth()
                )));
            }
        }
        let clamp = if clamp_subnet_output { Some(build_domain_clamp()?) } else { None };
        Ok(Self { input_dim, subnets, product, sign, clamp })
    }

    /// `m` random sub-networks with hidden widths `hidden` and a scalar output.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        num_subnets: usize,
        hidden: &[usize],
        product: Arc<ProductGadget>,
        a: f64,
        clamp_subnet_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = hidden.to_vec();
        widths.push(1);
        let subnets = (0..num_subnets)
            .map(|_| ReluNetwork::random_uniform(input_dim, &widths, false, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(subnets, product, build_sign_approx(a)?, clamp_subnet_output)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_subnets(&self) -> usize {
        self.subnets.len()
    }

    pub fn subnets(&self) -> &[ReluNetwork] {
        &self.subnets
    }

    pub(crate) fn subnets_mut(&mut self) -> &mut [ReluNetwork] {
        &mut self.subnets
    }

    pub fn product(&self) -> &ProductGadget {
        &self.product
    }

    pub fn product_arc(&self) -> Arc<ProductGadget> {
        Arc::clone(&self.product)
    }

    pub fn sign(&self) -> &SignApprox {
        &self.sign
    }

    pub fn a(&self) -> f64 {
        self.sign.a()
    }

    pub fn set_a(&mut self, a: f64) -> Result<()> {
        self.sign = build_sign_approx(a)?;
        Ok(())
    }

    pub fn clamps_subnet_output(&self) -> bool {
        self.clamp.is_some()
    }

    /// Concatenated parameters of all sub-networks.
    pub fn params(&self) -> Vec<f64> {
        self.subnets.iter().flat_map(|h| h.params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self.subnets.iter().map(|h| h.num_params()).sum();
        if params.len() != total {
            return Err(Error::Shape { expected: total, got: params.len() });
        }
        let mut rest = params;
        for h in &mut self.subnets {
            let (head, tail) = rest.split_at(h.num_params());
            h.set_params(head)?;
            rest = tail;
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { expected: self.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("{x:?} lies outside [0, 1]^{}", self.input_dim)));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x_prime)?;
        Ok(self.evaluate_unchecked(x, x_prime))
    }

    pub(crate) fn evaluate_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let hx = self.subnet_outputs(x);
        let hxp = self.subnet_outputs(x_prime);
        self.head(&hx, &hxp)
    }

    /// Raw sub-network outputs `h_i(x)` before the clamp.
    pub(crate) fn subnet_outputs(&self, x: &[f64]) -> Vec<f64> {
        self.subnets.iter().map(|h| h.forward_scalar_unchecked(x)).collect()
    }

    fn clamp_value(&self, v: f64) -> f64 {
        match &self.clamp {
            Some(c) => c.forward_scalar_unchecked(&[v]),
            None => v,
        }
    }

    fn clamp_with_grad(&self, v: f64) -> (f64, f64) {
        match &self.clamp {
            Some(c) => {
                let (y, g) = c.value_and_input_grad(&[v]);
                (y, g[0])
            }
            None => (v, 1.0),
        }
    }

    /// Everything downstream of the sub-networks. The product gadget always
    /// sees `(min, max)` of each pair, so the result is exactly symmetric.
    pub(crate) fn head(&self, hx: &[f64], hxp: &[f64]) -> f64 {
        let mut sum = 0.0;
        for (u, v) in hx.iter().zip(hxp) {
            let (u, v) = (self.clamp_value(*u), self.clamp_value(*v));
            sum += self.product.eval(u.min(v), u.max(v));
        }
        self.sign.eval(1.0 - 2.0 * sum)
    }

    /// `head` with its derivatives in the raw sub-network outputs.
    pub(crate) fn head_with_grad(&self, hx: &[f64], hxp: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let m = hx.len();
        let mut sum = 0.0;
        let mut du = vec![0.0; m];
        let mut dv = vec![0.0; m];
        for i in 0..m {
            let (u, cu) = self.clamp_with_grad(hx[i]);
            let (v, cv) = self.clamp_with_grad(hxp[i]);
            // phi sees (min, max); map its partials back onto (u, v)
            let (val, g_u, g_v) = if u <= v {
                self.product.eval_with_grad(u, v)
            } else {
                let (val, a, b) = self.product.eval_with_grad(v, u);
                (val, b, a)
            };
            sum += val;
            du[i] = g_u * cu;
            dv[i] = g_v * cv;
        }
        let (d, fa) = self.sign.eval_with_grad(1.0 - 2.0 * sum);
        let scale = -2.0 * fa;
        du.iter_mut().for_each(|g| *g *= scale);
        dv.iter_mut().for_each(|g| *g *= scale);
        (d, du, dv)
    }

    /// Pre-activation of `F_a`, `1 - 2 sum_i phi(...)`.
    pub(crate) fn sign_input(&self, hx: &[f64], hxp: &[f64]) -> f64 {
        let mut sum = 0.0;
        for (u, v) in hx.iter().zip(hxp) {
            let (u, v) = (self.clamp_value(*u), self.clamp_value(*v));
            sum += self.product.eval(u.min(v), u.max(v));
        }
        1.0 - 2.0 * sum
    }

    /// `d(x, x')` and its gradient in every sub-network's parameters.
    pub fn backward(&self, x: &[f64], x_prime: &[f64]) -> Result<(f64, Vec<Gradients>)> {
        self.check_point(x)?;
        self.check_point(x_prime)?;
        let hx = self.subnet_outputs(x);
        let hxp = self.subnet_outputs(x_prime);
        let (d, du, dv) = self.head_with_grad(&hx, &hxp);
        let grads = self
            .subnets
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let mut g = Gradients::zeros_like(h);
                if du[i] != 0.0 {
                    h.backward_accumulate(x, &[du[i]], &mut g);
                }
                if dv[i] != 0.0 {
                    h.backward_accumulate(x_prime, &[dv[i]], &mut g);
                }
                g
            })
            .collect();
        Ok((d, grads))
    }

    /// ReLU sign pattern of every unit the pair passes through. Equal
    /// signatures mean the pair sits in the same linear region.
    pub fn activation_signature(&self, x: &[f64], x_prime: &[f64]) -> Result<Vec<bool>> {
        self.check_point(x)?;
        self.check_point(x_prime)?;
        let mut sig = Vec::new();
        let hx = self.subnet_outputs(x);
        let hxp = self.subnet_outputs(x_prime);
        for (i, h) in self.subnets.iter().enumerate() {
            sig.extend(h.activation_pattern(x)?);
            sig.extend(h.activation_pattern(x_prime)?);
            let (mut u, mut v) = (hx[i], hxp[i]);
            if let Some(c) = &self.clamp {
                sig.extend(c.activation_pattern(&[u])?);
                sig.extend(c.activation_pattern(&[v])?);
                u = self.clamp_value(u);
                v = self.clamp_value(v);
            }
            sig.push(u <= v);
            sig.extend(self.product.net().activation_pattern(&[u.min(v), u.max(v)])?);
        }
        let t = self.sign_input(&hx, &hxp);
        sig.extend(self.sign.net().activation_pattern(&[t])?);
        Ok(sig)
    }

    pub fn complexity_breakdown(&self) -> ComplexityBreakdown {
        let m = self.subnets.len();
        let subnets: Vec<NetworkComplexity> = self.subnets.iter().map(ReluNetwork::complexity).collect();
        let clamp = self.clamp.as_ref().map(ReluNetwork::complexity);
        let product = self.product.complexity();
        let sign = self.sign.complexity();
        let glue = NetworkComplexity::new(0, 3 * m + 1, 1);

        let depth = subnets[0].depth + clamp.map_or(0, |c| c.depth) + product.depth + sign.depth;
        let sub_w: usize = subnets.iter().map(|c| c.nonzero_weights).sum();
        let sub_u: usize = subnets.iter().map(|c| c.units).sum();
        let (clamp_w, clamp_u) = clamp.map_or((0, 0), |c| (2 * m * c.nonzero_weights, 2 * m * c.units));
        let total = NetworkComplexity::new(
            depth,
            2 * sub_w + clamp_w + m * product.nonzero_weights + sign.nonzero_weights + glue.nonzero_weights,
            2 * sub_u + clamp_u + m * product.units + sign.units + glue.units,
        );
        ComplexityBreakdown { subnets, clamp, product, sign, glue, total }
    }

    pub fn is_admissible(&self, budget: &HypothesisBudget) -> bool {
        budget.admits(&aggregate_complexity(self))
    }

    /// Writes `manifest.json` and one model file per sub-network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.subnets.len());
        for (i, h) in self.subnets.iter().enumerate() {
            let name = format!("subnet_{i}.json");
            h.save(&dir.join(&name), None)?;
            files.push(name);
        }
        let manifest = StructuredManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            input_dim: self.input_dim,
            num_subnets: self.subnets.len(),
            a: self.a(),
            epsilon: self.product.epsilon(),
            clamp_subnet_output: self.clamps_subnet_output(),
            complexity: self.complexity_breakdown(),
            subnet_files: files,
        };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Loads a composite from a manifest file or the directory holding one.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path: PathBuf = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let manifest: StructuredManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unexpected format '{}'", manifest.format)));
        }
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
        }
        if manifest.subnet_files.len() != manifest.num_subnets {
            return Err(Error::Format("sub-network file count does not match num_subnets".into()));
        }
        let subnets = manifest
            .subnet_files
            .iter()
            .map(|f| ReluNetwork::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let product = Arc::new(build_product_gadget(manifest.epsilon)?);
        let net = Self::new(subnets, product, build_sign_approx(manifest.a)?, manifest.clamp_subnet_output)?;
        if net.input_dim != manifest.input_dim {
            return Err(Error::Format("input dimension does not match manifest".into()));
        }
        Ok(net)
    }
}

impl PairFunction for StructuredMetricNet {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn value(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        self.evaluate_unchecked(x, x_prime)
    }
}

/// On-disk description of a composite; gadgets are rebuilt from `a` and `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredManifest {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub num_subnets: usize,
    pub a: f64,
    pub epsilon: f64,
    pub clamp_subnet_output: bool,
    pub complexity: ComplexityBreakdown,
    pub subnet_files: Vec<String>,
}

/// Aggregated `(L, W, U)` of the composite, glue included.
pub fn aggregate_complexity(net: &StructuredMetricNet) -> NetworkComplexity {
    net.complexity_breakdown().total
}

/// `scale * L * W * log2(U)`.
pub fn pdim_bound(c: &NetworkComplexity, scale_constant: f64) -> Result<f64> {
    if c.units < 2 {
        return Err(Error::Parameter(format!("pseudo-dimension bound needs U >= 2, got {}", c.units)));
    }
    if !(scale_constant > 0.0 && scale_constant.is_finite()) {
        return Err(Error::Parameter("scale constant must be positive".into()));
    }
    Ok(scale_constant * c.depth as f64 * c.nonzero_weights as f64 * (c.units as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::DenseLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_subnet(value: f64) -> ReluNetwork {
        let hidden = DenseLayer::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let out = DenseLayer::new(1, 1, vec![0.0], vec![value]).unwrap();
        ReluNetwork::new(1, vec![hidden, out], false).unwrap()
    }

    fn gadget(eps: f64) -> Arc<ProductGadget> {
        Arc::new(build_product_gadget(eps).unwrap())
    }

    #[test]
    fn zero_subnets_give_one() {
        let net = StructuredMetricNet::new(
            vec![constant_subnet(0.0), constant_subnet(0.0)],
            gadget(1e-2),
            build_sign_approx(0.5).unwrap(),
            true,
        )
        .unwrap();
        assert_eq!(net.evaluate(&[0.3], &[0.8]).unwrap(), 1.0);
    }

    #[test]
    fn unit_subnet_saturates_negative() {
        let net =
            StructuredMetricNet::new(vec![constant_subnet(1.0)], gadget(1e-3), build_sign_approx(0.1).unwrap(), true)
                .unwrap();
        assert_eq!(net.evaluate(&[0.1], &[0.9]).unwrap(), -1.0);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = StructuredMetricNet::random(2, 3, &[6, 6], gadget(1e-2), 0.3, true, &mut rng).unwrap();
        for _ in 0..200 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let y = [rng.gen::<f64>(), rng.gen::<f64>()];
            let d = net.evaluate(&x, &y).unwrap();
            assert_eq!(d, net.evaluate(&y, &x).unwrap());
            assert!((-1.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn rejects_mixed_depths_and_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ReluNetwork::random_uniform(1, &[3, 1], false, &mut rng).unwrap();
        let b = ReluNetwork::random_uniform(1, &[3, 3, 1], false, &mut rng).unwrap();
        assert!(StructuredMetricNet::new(vec![a.clone(), b], gadget(1e-2), build_sign_approx(0.5).unwrap(), true).is_err());
        let net = StructuredMetricNet::new(vec![a], gadget(1e-2), build_sign_approx(0.5).unwrap(), true).unwrap();
        assert!(matches!(net.evaluate(&[1.2], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn depth_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = StructuredMetricNet::random(1, 1, &[3], gadget(1e-2), 0.5, false, &mut rng).unwrap();
        let b = net.complexity_breakdown();
        assert_eq!(b.total.depth, 2 + b.product.depth + 2);
    }

    #[test]
    fn doubling_m_doubles_subnet_and_product_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = StructuredMetricNet::random(1, 1, &[3], gadget(1e-2), 0.5, true, &mut rng).unwrap();
        let mut subs = one.subnets().to_vec();
        subs.extend(one.subnets().iter().cloned());
        let two = StructuredMetricNet::new(subs, one.product_arc(), one.sign().clone(), true).unwrap();
        let (c1, c2) = (one.complexity_breakdown(), two.complexity_breakdown());
        let fixed_w = c1.sign.nonzero_weights + 1;
        let per_m = |c: &ComplexityBreakdown| c.total.nonzero_weights - fixed_w;
        assert_eq!(per_m(&c2), 2 * per_m(&c1));
    }

    #[test]
    fn pdim_examples() {
        assert_eq!(pdim_bound(&NetworkComplexity::new(4, 100, 16), 1.0).unwrap(), 1600.0);
        assert_eq!(pdim_bound(&NetworkComplexity::new(4, 200, 16), 1.0).unwrap(), 3200.0);
        assert_eq!(pdim_bound(&NetworkComplexity::new(1, 1, 2), 1.0).unwrap(), 1.0);
        assert!(pdim_bound(&NetworkComplexity::new(1, 1, 1), 1.0).is_err());
    }

    #[test]
    fn budget_admission() {
        let budget = HypothesisBudget::new(5, 100, 20);
        assert!(budget.admits(&NetworkComplexity::new(5, 100, 20)));
        assert!(!budget.admits(&NetworkComplexity::new(6, 10, 2)));
        assert!(budget.check(&NetworkComplexity::new(1, 101, 1)).is_err());
    }
}
