//! Dense feedforward ReLU networks with exact forward/backward passes and
//! (depth, nonzero weights, units) complexity accounting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "simlearn-relu-net";
pub const MODEL_VERSION: u32 = 1;

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// One affine map `x -> T x + b`, weights stored row-major (`out_width x in_width`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    out_width: usize,
    in_width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(out_width: usize, in_width: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let layer = Self { out_width, in_width, weights, bias };
        layer.validate()?;
        Ok(layer)
    }

    /// Builds a layer from explicit rows.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let out_width = rows.len();
        let in_width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != in_width) {
            return Err(Error::Parameter("ragged weight rows".into()));
        }
        Self::new(out_width, in_width, rows.concat(), bias)
    }

    pub fn zeros(out_width: usize, in_width: usize) -> Result<Self> {
        Self::new(out_width, in_width, vec![0.0; out_width * in_width], vec![0.0; out_width])
    }

    fn validate(&self) -> Result<()> {
        if self.out_width == 0 || self.in_width == 0 {
            return Err(Error::Parameter("layer widths must be at least 1".into()));
        }
        if self.weights.len() != self.out_width * self.in_width {
            return Err(Error::Shape { expected: self.out_width * self.in_width, got: self.weights.len() });
        }
        if self.bias.len() != self.out_width {
            return Err(Error::Shape { expected: self.out_width, got: self.bias.len() });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite layer parameter".into()));
        }
        Ok(())
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_width + col]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_width).zip(&self.bias) {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    fn nonzeros(&self) -> usize {
        self.weights.iter().chain(&self.bias).filter(|v| **v != 0.0).count()
    }
}

/// Depth `L`, nonzero weights and biases `W`, computation units `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NetworkComplexity {
    pub depth: usize,
    pub nonzero_weights: usize,
    pub units: usize,
}

impl NetworkComplexity {
    pub fn new(depth: usize, nonzero_weights: usize, units: usize) -> Self {
        Self { depth, nonzero_weights, units }
    }
}

impl std::ops::Add for NetworkComplexity {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            depth: self.depth + rhs.depth,
            nonzero_weights: self.nonzero_weights + rhs.nonzero_weights,
            units: self.units + rhs.units,
        }
    }
}

impl std::fmt::Display for NetworkComplexity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(L={}, W={}, U={})", self.depth, self.nonzero_weights, self.units)
    }
}

/// Reverse-mode derivatives of a network output contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &ReluNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.input.iter_mut().zip(&other.input).for_each(|(x, y)| *x += y);
    }

    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().flatten().for_each(|v| *v *= c);
        self.biases.iter_mut().flatten().for_each(|v| *v *= c);
        self.input.iter_mut().for_each(|v| *v *= c);
    }

    /// Squared Euclidean norm over parameter gradients (input gradient excluded).
    pub fn param_norm_sq(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().map(|v| v * v).sum()
    }

    /// Parameter gradients in the order of [`ReluNetwork::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().chain(&self.input).all(|v| v.is_finite())
    }
}

/// `x -> sigma(T_L sigma(... sigma(T_1 x + b_1) ...) + b_L)`.
///
/// With `apply_final_relu == false` the last layer stays affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNetwork {
    input_dim: usize,
    apply_final_relu: bool,
    layers: Vec<DenseLayer>,
}

struct Trace {
    /// Input followed by the post-activation output of every layer.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values of every layer.
    pre: Vec<Vec<f64>>,
}

impl ReluNetwork {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>, apply_final_relu: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        let mut width = input_dim;
        for layer in &layers {
            layer.validate()?;
            if layer.in_width != width {
                return Err(Error::Shape { expected: width, got: layer.in_width });
            }
            width = layer.out_width;
        }
        Ok(Self { input_dim, apply_final_relu, layers })
    }

    /// Random network with layer widths `widths` (last entry = output width).
    /// Weights and biases are uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        apply_final_relu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &w in widths {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..w * fan_in).map(|_| rng.gen_range(-bound..=bound)).collect();
            let bias = (0..w).map(|_| rng.gen_range(-bound..=bound)).collect();
            layers.push(DenseLayer::new(w, fan_in, weights, bias)?);
            fan_in = w;
        }
        Self::new(input_dim, layers, apply_final_relu)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_width)
    }

    pub fn apply_final_relu(&self) -> bool {
        self.apply_final_relu
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`ReluNetwork::params`].
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.apply_final_relu
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { expected: self.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Forward pass of a scalar-output network.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::Shape { expected: 1, got: self.output_dim() });
        }
        Ok(self.forward(x)?[0])
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        self.forward_with(&mut cur, &mut next);
        cur
    }

    /// Scalar-output forward pass reusing thread-local buffers.
    pub(crate) fn forward_scalar_unchecked(&self, x: &[f64]) -> f64 {
        GRAD_SCRATCH.with(|cell| {
            let GradScratch { delta, prev, .. } = &mut *cell.borrow_mut();
            delta.clear();
            delta.extend_from_slice(x);
            self.forward_with(delta, prev);
            delta[0]
        })
    }

    fn forward_with(&self, cur: &mut Vec<f64>, next: &mut Vec<f64>) {
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine_into(cur, next);
            if self.activates(k) {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(cur, next);
        }
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_width);
            layer.affine_into(&activations[k], &mut z);
            let a = if self.activates(k) { z.iter().map(|v| relu(*v)).collect() } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        Trace { activations, pre }
    }

    /// Gradient of `<upstream, forward(x)>` with respect to every weight,
    /// bias and input coordinate. Uses `sigma'(0) = 0`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), got: upstream.len() });
        }
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(x, upstream, &mut grads);
        Ok(grads)
    }

    /// Adds the gradient of `<upstream, forward(x)>` into `grads`.
    pub(crate) fn backward_accumulate(&self, x: &[f64], upstream: &[f64], grads: &mut Gradients) {
        let trace = self.trace(x);
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if self.activates(k) {
                for (d, z) in delta.iter_mut().zip(&trace.pre[k]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.activations[k];
            let gw = &mut grads.weights[k];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grads.biases[k][r] += d;
                let row = &mut gw[r * layer.in_width..(r + 1) * layer.in_width];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
            }
            let mut prev = vec![0.0; layer.in_width];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.in_width..(r + 1) * layer.in_width];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            delta = prev;
        }
        grads.input.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
    }

    /// Value and input gradient of a scalar-output network, skipping parameter gradients.
    pub(crate) fn value_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        // hot path for the fixed gadgets: no per-layer allocation
        GRAD_SCRATCH.with(|cell| {
            let GradScratch { act, offsets, delta, prev } = &mut *cell.borrow_mut();
            act.clear();
            offsets.clear();
            act.extend_from_slice(x);
            offsets.push(0);
            for (k, layer) in self.layers.iter().enumerate() {
                let in_off = offsets[k];
                offsets.push(act.len());
                for row in layer.weights.chunks_exact(layer.in_width).zip(&layer.bias) {
                    let (w, b) = row;
                    let z = w.iter().zip(&act[in_off..in_off + layer.in_width]).fold(*b, |acc, (w, v)| acc + w * v);
                    act.push(if self.activates(k) { relu(z) } else { z });
                }
            }
            let value = act[offsets[self.layers.len()]];
            delta.clear();
            delta.push(1.0);
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                if self.activates(k) {
                    // after the ReLU, a positive output means a positive pre-activation
                    let out = &act[offsets[k + 1]..];
                    delta.iter_mut().zip(out).filter(|(_, a)| **a <= 0.0).for_each(|(d, _)| *d = 0.0);
                }
                prev.clear();
                prev.resize(layer.in_width, 0.0);
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[r * layer.in_width..(r + 1) * layer.in_width];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                std::mem::swap(delta, prev);
            }
            (value, delta.clone())
        })
    }

    /// Sign pattern (`pre-activation > 0`) of every ReLU unit at `x`.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        Ok(trace
            .pre
            .iter()
            .enumerate()
            .filter(|(k, _)| self.activates(*k))
            .flat_map(|(_, z)| z.iter().map(|v| *v > 0.0))
            .collect())
    }

    pub fn complexity(&self) -> NetworkComplexity {
        NetworkComplexity {
            depth: self.layers.len(),
            nonzero_weights: self.layers.iter().map(DenseLayer::nonzeros).sum(),
            units: self.layers.iter().map(|l| l.out_width).sum(),
        }
    }

    /// Stacks `other` on top of `self`; every layer of `self` gets a ReLU.
    pub fn concat(&self, other: &ReluNetwork) -> Result<ReluNetwork> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        ReluNetwork::new(self.input_dim, layers, other.apply_final_relu)
    }

    /// Subtracts `rate * grads` from the parameters.
    pub(crate) fn apply_step(&mut self, grads: &Gradients, rate: f64) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            layer.weights.iter_mut().zip(&grads.weights[k]).for_each(|(w, g)| *w -= rate * g);
            layer.bias.iter_mut().zip(&grads.biases[k]).for_each(|(b, g)| *b -= rate * g);
        }
    }

    pub fn to_model_file(&self, metadata: Option<&BTreeMap<String, serde_json::Value>>) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            input_dim: self.input_dim,
            apply_final_relu: self.apply_final_relu,
            layers: self.layers.clone(),
            metadata: metadata.cloned().unwrap_or_default(),
        }
    }

    pub fn save(&self, path: &Path, metadata: Option<&BTreeMap<String, serde_json::Value>>) -> Result<()> {
        self.to_model_file(metadata).save(path)
    }

    pub fn load(path: &Path) -> Result<ReluNetwork> {
        ModelFile::load(path)?.into_network()
    }
}

/// Versioned on-disk representation of a [`ReluNetwork`].
///
/// Floats are written in shortest round-trip decimal form, so a save/load
/// cycle reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub apply_final_relu: bool,
    pub layers: Vec<DenseLayer>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported version {}", file.version)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn into_network(self) -> Result<ReluNetwork> {
        ReluNetwork::new(self.input_dim, self.layers, self.apply_final_relu)
    }
}

#[derive(Default)]
struct GradScratch {
    act: Vec<f64>,
    offsets: Vec<usize>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

thread_local! {
    static GRAD_SCRATCH: std::cell::RefCell<GradScratch> = std::cell::RefCell::new(GradScratch::default());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_net() -> ReluNetwork {
        let l1 = DenseLayer::from_rows(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap();
        let l2 = DenseLayer::from_rows(&[vec![1.0, 1.0]], vec![0.0]).unwrap();
        ReluNetwork::new(1, vec![l1, l2], false).unwrap()
    }

    fn scalar_net(w: f64) -> ReluNetwork {
        let l = DenseLayer::from_rows(&[vec![w]], vec![0.0]).unwrap();
        ReluNetwork::new(1, vec![l], true).unwrap()
    }

    #[test]
    fn single_unit_forward() {
        let net = scalar_net(1.0);
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn abs_gadget_forward() {
        let net = abs_net();
        for (t, want) in [(-2.0, 2.0), (0.0, 0.0), (5.0, 5.0)] {
            assert_eq!(net.forward(&[t]).unwrap(), vec![want]);
        }
    }

    #[test]
    fn single_unit_backward() {
        let net = scalar_net(2.0);
        let g = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights, vec![vec![3.0]]);
        assert_eq!(g.biases, vec![vec![1.0]]);
        assert_eq!(g.input, vec![2.0]);

        let g = net.backward(&[-3.0], &[1.0]).unwrap();
        assert_eq!(g.weights, vec![vec![0.0]]);
        assert_eq!(g.biases, vec![vec![0.0]]);
        assert_eq!(g.input, vec![0.0]);
    }

    #[test]
    fn complexity_counts() {
        let id = DenseLayer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let net = ReluNetwork::new(2, vec![id], true).unwrap();
        assert_eq!(net.complexity(), NetworkComplexity::new(1, 2, 2));

        assert_eq!(abs_net().complexity(), NetworkComplexity::new(2, 4, 3));

        let ones = DenseLayer::new(3, 3, vec![1.0; 9], vec![0.0; 3]).unwrap();
        let net = ReluNetwork::new(3, vec![ones], true).unwrap();
        assert_eq!(net.complexity(), NetworkComplexity::new(1, 9, 3));
    }

    #[test]
    fn shape_and_domain_errors() {
        let net = abs_net();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(net.forward(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(net.backward(&[1.0], &[1.0, 1.0]), Err(Error::Shape { .. })));
        let bad = DenseLayer::from_rows(&[vec![1.0, 1.0]], vec![0.0]).unwrap();
        assert!(ReluNetwork::new(1, vec![bad], true).is_err());
        assert!(DenseLayer::new(1, 1, vec![f64::INFINITY], vec![0.0]).is_err());
    }

    #[test]
    fn model_file_rejects_wrong_version() {
        let mut file = abs_net().to_model_file(None);
        file.version = 99;
        let text = serde_json::to_string(&file).unwrap();
        assert!(matches!(ModelFile::from_json(&text), Err(Error::Format(_))));
    }

    #[test]
    fn activation_pattern_skips_affine_output() {
        let net = abs_net();
        assert_eq!(net.activation_pattern(&[2.0]).unwrap(), vec![true, false]);
    }
}
