//! Fully connected networks with a flat parameter vector.
//!
//! Canonical parameter order, used by checkpoints: for each layer `n`
//! (input side first), the weight matrix `W(n)` of shape
//! `size[n+1] x size[n]` in row-major order, followed by the bias `b(n)` of
//! length `size[n+1]`. Hidden layers apply the activation; the output
//! layer is affine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{dot, Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Layer sizes from input to output plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weights: usize,
    pub bias: usize,
    /// Output width.
    pub rows: usize,
    /// Input width.
    pub cols: usize,
}

impl DenseNetSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "a network needs at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::ShapeMismatch("layer sizes must be >= 1".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    /// `input -> hidden... -> output` with tanh hidden layers.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, Activation::Tanh)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let l = LayerLayout {
                    weights: offset,
                    bias: offset + rows * cols,
                    rows,
                    cols,
                };
                offset += rows * cols + rows;
                l
            })
            .collect()
    }

    fn check_params(&self, params: &NetParams) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "expected input of length {}, got {}",
                self.input_size(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// All weights and biases of a network in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetParams(Vec<f64>);

impl NetParams {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(spec: &DenseNetSpec) -> Self {
        Self(vec![0.0; spec.num_params()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// One layer's weights (`rows x cols`, row-major) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn unflatten(spec: &DenseNetSpec, params: &NetParams) -> Result<Vec<LayerParams>> {
    spec.check_params(params)?;
    Ok(spec
        .layout()
        .iter()
        .map(|l| LayerParams {
            weights: params.0[l.weights..l.bias].to_vec(),
            bias: params.0[l.bias..l.bias + l.rows].to_vec(),
        })
        .collect())
}

pub fn flatten(spec: &DenseNetSpec, layers: &[LayerParams]) -> Result<NetParams> {
    let layout = spec.layout();
    if layers.len() != layout.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} layers, got {}",
            layout.len(),
            layers.len()
        )));
    }
    let mut out = Vec::with_capacity(spec.num_params());
    for (l, p) in layout.iter().zip(layers) {
        if p.weights.len() != l.rows * l.cols || p.bias.len() != l.rows {
            return Err(Error::ShapeMismatch("layer parameter shape".into()));
        }
        out.extend_from_slice(&p.weights);
        out.extend_from_slice(&p.bias);
    }
    Ok(NetParams(out))
}

/// Scaled-uniform initialization: weights and biases uniform in
/// `+-1 / sqrt(fan_in)`.
pub fn init_params(spec: &DenseNetSpec, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; spec.num_params()];
    for l in spec.layout() {
        let bound = 1.0 / (l.cols as f64).sqrt();
        for w in &mut out[l.weights..l.bias + l.rows] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    NetParams(out)
}

/// Evaluate the network on one input.
pub fn forward(spec: &DenseNetSpec, params: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    Ok(forward_unchecked(spec, params.as_slice(), x, &mut Vec::new()))
}

/// Forward pass that records hidden activations in `acts` (one vector per
/// layer input, so `acts[0] == x`).
fn forward_unchecked(spec: &DenseNetSpec, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
    acts.clear();
    acts.push(x.to_vec());
    let layout = spec.layout();
    let last = layout.len() - 1;
    for (n, l) in layout.iter().enumerate() {
        let input = &acts[n];
        let mut z: Vec<f64> = (0..l.rows)
            .map(|r| {
                let row = &params[l.weights + r * l.cols..l.weights + (r + 1) * l.cols];
                dot(row, input) + params[l.bias + r]
            })
            .collect();
        if n < last {
            for v in &mut z {
                *v = spec.activation.apply(*v);
            }
        }
        acts.push(z);
    }
    acts.pop().expect("at least one layer")
}

/// Exact gradient of output `output_index` with respect to the input.
pub fn grad_inputs(spec: &DenseNetSpec, params: &NetParams, x: &[f64], output_index: usize) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    if output_index >= spec.output_size() {
        return Err(Error::ShapeMismatch(format!(
            "output index {output_index} out of range for {} outputs",
            spec.output_size()
        )));
    }
    let mut scratch = Vec::new();
    Ok(grad_inputs_unchecked(spec, params.as_slice(), x, output_index, &mut scratch))
}

pub(crate) fn grad_inputs_unchecked(
    spec: &DenseNetSpec,
    params: &[f64],
    x: &[f64],
    output_index: usize,
    acts: &mut Vec<Vec<f64>>,
) -> Vec<f64> {
    forward_unchecked(spec, params, x, acts);
    let layout = spec.layout();
    let last = layout.len() - 1;
    // Cotangent on the output of the current layer (pre-activation for the
    // output layer, post-activation for hidden ones).
    let mut g = vec![0.0; spec.output_size()];
    g[output_index] = 1.0;
    for n in (0..layout.len()).rev() {
        let l = layout[n];
        if n < last && spec.activation == Activation::Tanh {
            // acts[n + 1] holds tanh(z) for hidden layer n.
            for (gi, a) in g.iter_mut().zip(&acts[n + 1]) {
                *gi *= 1.0 - a * a;
            }
        }
        let mut prev = vec![0.0; l.cols];
        for (r, gr) in g.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            let row = &params[l.weights + r * l.cols..l.weights + (r + 1) * l.cols];
            for (p, w) in prev.iter_mut().zip(row) {
                *p += w * gr;
            }
        }
        g = prev;
    }
    g
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub spec: DenseNetSpec,
    pub params: NetParams,
}

impl DenseNet {
    pub fn new(spec: DenseNetSpec, params: NetParams) -> Result<Self> {
        spec.check_params(&params)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: DenseNetSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self { spec, params }
    }

    pub fn zeros(spec: DenseNetSpec) -> Self {
        let params = NetParams::zeros(&spec);
        Self { spec, params }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, x)
    }

    pub fn grad_inputs(&self, x: &[f64], output_index: usize) -> Result<Vec<f64>> {
        grad_inputs(&self.spec, &self.params, x, output_index)
    }

    /// Scalar output for an input whose length was validated at construction.
    pub(crate) fn eval_scalar(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.spec.input_size());
        forward_unchecked(&self.spec, self.params.as_slice(), x, &mut Vec::new())[0]
    }

    /// Input gradient of output 0 for a validated input length.
    pub(crate) fn eval_input_grad(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.spec.input_size());
        grad_inputs_unchecked(&self.spec, self.params.as_slice(), x, 0, &mut Vec::new())
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        forward_unchecked(&self.spec, self.params.as_slice(), x, &mut Vec::new())
    }

    pub fn bind(&self, graph: &mut Graph) -> NetVars {
        NetVars::bind(graph, &self.spec, self.params.as_slice()).expect("parameters validated at construction")
    }
}

/// Network parameters bound as leaves of a [`Graph`].
#[derive(Debug, Clone)]
pub struct NetVars {
    layers: Vec<(Var, Var)>,
    layout: Vec<LayerLayout>,
    activation: Activation,
}

impl NetVars {
    /// Copy `params` into the graph, one leaf per weight matrix and bias.
    pub fn bind(graph: &mut Graph, spec: &DenseNetSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                params.len()
            )));
        }
        let layout = spec.layout();
        let layers = layout
            .iter()
            .map(|l| {
                let w = graph.leaf(&params[l.weights..l.bias]);
                let b = graph.leaf(&params[l.bias..l.bias + l.rows]);
                (w, b)
            })
            .collect();
        Ok(Self {
            layers,
            layout,
            activation: spec.activation,
        })
    }

    pub fn input_size(&self) -> usize {
        self.layout[0].cols
    }

    /// Parameter leaves in canonical order.
    pub fn leaves(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Record a forward pass on `x`.
    pub fn forward(&self, graph: &mut Graph, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (n, (&(w, b), l)) in self.layers.iter().zip(&self.layout).enumerate() {
            let z = graph.matvec(w, h, l.rows, l.cols);
            let z = graph.add(z, b);
            h = if n < last && self.activation == Activation::Tanh {
                graph.tanh(z)
            } else {
                z
            };
        }
        h
    }

    /// Record `d out[0] / d x` for a scalar-output network. The result is
    /// differentiable with respect to the parameters and `x`.
    pub fn input_gradient(&self, graph: &mut Graph, x: Var) -> Result<Var> {
        let y = self.forward(graph, x);
        Ok(graph.grad(y, &[x])?[0])
    }
}

/// Gradient of a scalar node with respect to the parameters of `nets`,
/// concatenated in canonical order. Contributions flowing through recorded
/// input-gradients are included.
pub fn grad_params_through(graph: &mut Graph, loss: Var, nets: &[&NetVars]) -> Result<Vec<f64>> {
    let leaves: Vec<Var> = nets.iter().flat_map(|n| n.leaves()).collect();
    let grads = graph.grad(loss, &leaves)?;
    let total: usize = grads.iter().map(|g| graph.len_of(*g)).sum();
    let mut out = Vec::with_capacity(total);
    for g in grads {
        out.extend_from_slice(graph.value(g));
    }
    Ok(out)
}

/// Central-difference check of an analytic gradient. Returns the largest
/// componentwise relative error, with denominator `max(|analytic|, 1e-8)`.
pub fn finite_diff_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], eps: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(analytic.len(), x.len(), "gradient and point differ in length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        let fd = (fp - fm) / (2.0 * eps);
        let err = (fd - analytic[i]).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(spec: &DenseNetSpec, seed: u64, bias_scale: f64) -> NetParams {
        let mut p = init_params(spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in spec.layout() {
            for b in &mut p.as_mut_slice()[l.bias..l.bias + l.rows] {
                *b = rng.gen_range(-bias_scale..bias_scale);
            }
        }
        p
    }

    #[test]
    fn zero_params_give_zero_output_and_gradient() {
        let spec = DenseNetSpec::mlp(3, &[5, 4], 2).unwrap();
        let p = NetParams::zeros(&spec);
        assert_eq!(forward(&spec, &p, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(grad_inputs(&spec, &p, &[0.3, -1.0, 2.0], 1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_affine_layer() {
        let spec = DenseNetSpec::new(vec![1, 1], Activation::Tanh).unwrap();
        let p = NetParams::new(vec![2.0, 1.0]);
        assert_eq!(forward(&spec, &p, &[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn one_hidden_tanh_unit() {
        let spec = DenseNetSpec::mlp(1, &[1], 1).unwrap();
        let p = NetParams::new(vec![1.0, 0.0, 1.0, 0.0]);
        let y = forward(&spec, &p, &[0.5]).unwrap()[0];
        assert_abs_diff_eq!(y, 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(y, 0.462117, epsilon = 1e-6);
    }

    #[test]
    fn linear_net_gradient_is_weight_product() {
        let spec = DenseNetSpec::new(vec![2, 3, 1], Activation::Identity).unwrap();
        let p = init_params(&spec, 3);
        let layers = unflatten(&spec, &p).unwrap();
        let (w1, w2) = (&layers[0].weights, &layers[1].weights);
        let expected: Vec<f64> = (0..2).map(|c| (0..3).map(|r| w2[r] * w1[r * 2 + c]).sum()).collect();
        for x in [[0.0, 0.0], [1.0, -2.0], [5.0, 3.0]] {
            let g = grad_inputs(&spec, &p, &x, 0).unwrap();
            for (a, b) in g.iter().zip(&expected) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let spec = DenseNetSpec::mlp(2, &[3], 1).unwrap();
        let p = NetParams::zeros(&spec);
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(grad_inputs(&spec, &p, &[1.0, 2.0], 1), Err(Error::ShapeMismatch(_))));
        assert!(DenseNetSpec::new(vec![3], Activation::Tanh).is_err());
        assert!(DenseNetSpec::new(vec![3, 0, 1], Activation::Tanh).is_err());
    }

    #[test]
    fn init_bounds_and_determinism() {
        let spec = DenseNetSpec::mlp(2, &[200], 1).unwrap();
        let a = init_params(&spec, 42);
        assert_eq!(a, init_params(&spec, 42));
        assert_ne!(a, init_params(&spec, 43));
        let layout = spec.layout();
        let bounds = [1.0 / 2f64.sqrt(), 1.0 / 200f64.sqrt()];
        for (l, bound) in layout.iter().zip(bounds) {
            let block = &a.as_slice()[l.weights..l.bias + l.rows];
            assert!(block.iter().all(|w| w.abs() <= bound));
            // Uniform draws fill most of the range.
            assert!(block.iter().fold(0.0f64, |m, w| m.max(w.abs())) > 0.9 * bound);
        }
        let biases = &a.as_slice()[layout[0].bias..layout[0].bias + 200];
        assert!(biases.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn finite_diff_check_basics() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1];
        let x = [0.7, -1.3];
        let analytic = [2.0 * x[0] + 3.0 * x[1], 3.0 * x[0] - 2.0 * x[1]];
        assert!(finite_diff_check(f, &analytic, &x, 1e-5) <= 1e-9);
        assert!(finite_diff_check(|x: &[f64]| x[0].tanh(), &[1.0], &[0.0], 1e-5) <= 1e-10);
    }

    #[test]
    fn graph_and_numeric_paths_agree() {
        let spec = DenseNetSpec::mlp(4, &[7, 5], 1).unwrap();
        let p = random_params(&spec, 9, 0.3);
        let x = [0.2, -0.4, 0.1, 0.6];
        let mut g = Graph::new();
        let net = NetVars::bind(&mut g, &spec, p.as_slice()).unwrap();
        let xv = g.leaf(&x);
        let y = net.forward(&mut g, xv);
        assert_abs_diff_eq!(g.scalar_value(y), forward(&spec, &p, &x).unwrap()[0], epsilon = 1e-14);
        let gx = net.input_gradient(&mut g, xv).unwrap();
        let numeric = grad_inputs(&spec, &p, &x, 0).unwrap();
        for (a, b) in g.value(gx).iter().zip(&numeric) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn first_order_param_gradient_matches_fd() {
        let spec = DenseNetSpec::mlp(3, &[6], 2).unwrap();
        let p = random_params(&spec, 5, 0.2);
        let x = [0.3, -0.2, 0.8];
        let loss = |params: &[f64]| {
            let y = forward(&spec, &NetParams::new(params.to_vec()), &x).unwrap();
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut g = Graph::new();
        let net = NetVars::bind(&mut g, &spec, p.as_slice()).unwrap();
        let xv = g.leaf(&x);
        let y = net.forward(&mut g, xv);
        let l = g.sq_norm(y);
        let grad = grad_params_through(&mut g, l, &[&net]).unwrap();
        assert!(finite_diff_check(loss, &grad, p.as_slice(), 1e-5) <= 1e-6);
    }

    #[test]
    fn second_order_param_gradient_matches_fd() {
        let spec = DenseNetSpec::mlp(3, &[8], 1).unwrap();
        let p = random_params(&spec, 6, 0.3);
        let x = [0.4, -0.1, 0.25];
        let loss = |params: &[f64]| {
            let g = grad_inputs(&spec, &NetParams::new(params.to_vec()), &x, 0).unwrap();
            g.iter().map(|v| v * v).sum::<f64>()
        };
        let mut g = Graph::new();
        let net = NetVars::bind(&mut g, &spec, p.as_slice()).unwrap();
        let xv = g.leaf(&x);
        let gx = net.input_gradient(&mut g, xv).unwrap();
        let l = g.sq_norm(gx);
        let grad = grad_params_through(&mut g, l, &[&net]).unwrap();
        assert!(finite_diff_check(loss, &grad, p.as_slice(), 1e-5) <= 1e-5);
    }

    proptest! {
        #[test]
        fn flatten_round_trips(sizes in proptest::collection::vec(1usize..6, 2..5), seed in 0u64..1000) {
            let spec = DenseNetSpec::new(sizes, Activation::Tanh).unwrap();
            let p = init_params(&spec, seed);
            let layers = unflatten(&spec, &p).unwrap();
            prop_assert_eq!(flatten(&spec, &layers).unwrap(), p);
        }
    }
}
