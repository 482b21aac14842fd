use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{dot, SeededRng};
use crate::error::{ensure, Error, Result};

/// Smooth elementwise nonlinearity applied between affine layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Affine map `y = W x + b`; `weights` is row-major `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Intermediate values of one forward pass: the input seen by every layer
/// (post-activation of the previous one) and the final output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub layer_inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Multilayer perceptron: affine + activation per hidden layer, affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Gradient with the same layout as an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Sums gradients in slice order.
    pub fn sum<'a>(net: &Mlp, grads: impl IntoIterator<Item = &'a MlpGrad>) -> MlpGrad {
        let mut total = MlpGrad::zeros_like(net);
        for g in grads {
            total.add_assign(g);
        }
        total
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

impl Mlp {
    /// Random init: weights `N(0, 1/fan_in)`, zero biases.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        for layer in &mut net.layers {
            let std = (1.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = std * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        ensure!(
            dims.len() >= 2,
            InvalidInput,
            "an MLP needs at least two layer dims, got {dims:?}"
        );
        ensure!(
            dims.iter().all(|&d| d > 0),
            InvalidInput,
            "layer dims must be positive: {dims:?}"
        );
        Ok(Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        ensure!(!layers.is_empty(), InvalidInput, "an MLP needs at least one layer");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.in_dim > 0 && l.out_dim > 0,
                InvalidInput,
                "layer {i} has an empty dimension"
            );
            ensure!(
                l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim,
                InvalidInput,
                "layer {i} parameter shapes do not match {}x{}",
                l.out_dim,
                l.in_dim
            );
            ensure!(
                l.weights.iter().chain(&l.bias).all(|x| x.is_finite()),
                InvalidInput,
                "layer {i} has non-finite parameters"
            );
        }
        for (i, w) in layers.windows(2).enumerate() {
            ensure!(
                w[0].out_dim == w[1].in_dim,
                InvalidInput,
                "layer {i} output dim {} does not feed layer {} input dim {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            );
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.num_params(),
            InvalidInput,
            "expected {} parameters, got {}",
            self.num_params(),
            flat.len()
        );
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        ensure!(
            input.len() == self.input_dim(),
            InvalidInput,
            "input has length {}, network expects {}",
            input.len(),
            self.input_dim()
        );
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h);
            if i < last {
                h.iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.affine(&h);
            if i < last {
                next.iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
            layer_inputs.push(h);
            h = next;
        }
        Ok(Trace {
            layer_inputs,
            output: h,
        })
    }

    /// Gradients of `output · upstream` with respect to every parameter and
    /// the input, given a trace from [`Mlp::forward_trace`].
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        ensure!(
            upstream.len() == self.output_dim(),
            InvalidInput,
            "upstream gradient has length {}, network output is {}",
            upstream.len(),
            self.output_dim()
        );
        ensure!(
            trace.layer_inputs.len() == self.layers.len(),
            InvalidInput,
            "trace does not belong to this network"
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.layer_inputs[i];
            let mut lg = Layer::zeros(layer.in_dim, layer.out_dim);
            for (r, gr) in g.iter().enumerate() {
                let row = &mut lg.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (w, ai) in row.iter_mut().zip(a) {
                    *w = gr * ai;
                }
            }
            lg.bias.copy_from_slice(&g);
            let mut g_in = vec![0.0; layer.in_dim];
            for (r, gr) in g.iter().enumerate() {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (gi, w) in g_in.iter_mut().zip(row) {
                    *gi += gr * w;
                }
            }
            if i > 0 {
                for (gi, ai) in g_in.iter_mut().zip(a) {
                    *gi *= self.activation.derivative_from_output(*ai);
                }
            }
            grads.push(lg);
            g = g_in;
        }
        grads.reverse();
        Ok((MlpGrad { layers: grads }, g))
    }

    /// Forward then backward from a raw input.
    pub fn backward_from_input(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        self.backward(&trace, upstream)
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            layer_dims: self.dims(),
            activation: self.activation,
            params: self.params(),
        }
    }

    pub fn from_record(rec: &MlpRecord) -> Result<Self> {
        let mut net = Self::zeros(&rec.layer_dims, rec.activation)?;
        net.set_params(&rec.params)?;
        if !rec.params.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite weights in record".into()));
        }
        Ok(net)
    }

    /// SHA-256 over dims, activation and the exact parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims() {
            h.update((d as u64).to_le_bytes());
        }
        h.update(format!("{:?}", self.activation).as_bytes());
        for p in self.params() {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Serializable network: layer dims plus flat parameters (per layer,
/// row-major weights followed by biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}
