//! Dense feed-forward networks: inference, backpropagation and layer fusion.

mod io;
mod matrix;

use std::fmt;
use std::str::FromStr;

pub use io::{read_weights, write_weights, WeightFile};
pub use matrix::Matrix;

use crate::error::{param, structural, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`; the ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(param(format!("unknown activation `{s}`"))),
        }
    }
}

/// Affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Indexed `[output][input]`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Set on layers holding hard-sign ramps; trainers may freeze them.
    pub ramp: bool,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(structural(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.rows()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(structural("layer parameters must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            ramp: false,
        })
    }

    pub fn with_ramp(mut self, ramp: bool) -> Self {
        self.ramp = ramp;
        self
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.pre_activation(x);
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        z
    }
}

/// Feed-forward decoder: N LLRs in, K soft symbols out.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDecoder {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    output_dim: usize,
    /// Saturation bound used by preservation wiring.
    pub l_max: f64,
    /// Half-width of hard-sign ramps.
    pub eps: f64,
}

impl NeuralDecoder {
    pub fn new(layers: Vec<DenseLayer>, input_dim: usize, l_max: f64, eps: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(structural("a decoder needs at least one layer"));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs() != width {
                return Err(structural(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.inputs()
                )));
            }
            if layer.bias.len() != layer.outputs() {
                return Err(structural(format!("layer {i} bias length mismatch")));
            }
            width = layer.outputs();
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: width,
            l_max,
            eps,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Parameter access for training; shapes must not change.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(structural(format!(
                "decoder takes {} inputs, got {}",
                self.input_dim,
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.apply(&x);
        }
        Ok(x)
    }

    /// Every intermediate vector, starting with the input itself.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.apply(trace.last().expect("non-empty"));
            trace.push(next);
        }
        Ok(trace)
    }

    /// Exact MSE gradients against `target`.
    pub fn gradients(&self, input: &[f64], target: &[f64]) -> Result<(GradientSet, f64)> {
        self.gradients_with(input, target, |layer, _, z| {
            self.layers[layer].activation.derivative(z)
        })
    }

    /// MSE gradients with `derivative(layer, row, pre_activation)` standing
    /// in for the activation derivative, e.g. a straight-through surrogate.
    pub fn gradients_with<D>(
        &self,
        input: &[f64],
        target: &[f64],
        derivative: D,
    ) -> Result<(GradientSet, f64)>
    where
        D: Fn(usize, usize, f64) -> f64,
    {
        self.check_input(input)?;
        if target.len() != self.output_dim {
            return Err(structural(format!(
                "target length {} does not match {} outputs",
                target.len(),
                self.output_dim
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let z = layer.pre_activation(activations.last().expect("non-empty"));
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            activations.push(a);
        }
        let out = activations.last().expect("non-empty");
        let k = self.output_dim.max(1) as f64;
        let loss = out
            .iter()
            .zip(target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / k;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(o, t)| 2.0 * (o - t) / k)
            .collect();

        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            for (row, (d, &z)) in delta.iter_mut().zip(&pre[idx]).enumerate() {
                *d *= derivative(idx, row, z);
            }
            let a_prev = &activations[idx];
            let mut gw = Matrix::zeros(layer.outputs(), layer.inputs());
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &a) in gw.row_mut(r).iter_mut().zip(a_prev) {
                    *g = d * a;
                }
            }
            let next_delta = if idx > 0 {
                layer.weights.mul_vec_transposed(&delta)
            } else {
                Vec::new()
            };
            weights.push(gw);
            biases.push(delta);
            delta = next_delta;
        }
        weights.reverse();
        biases.reverse();
        Ok((GradientSet { weights, biases }, loss))
    }

    /// Fuses every non-final identity layer into its successor.
    ///
    /// `A1 · (A2 x + b2) + b1 = (A1 A2) x + (A1 b2 + b1)`, so the network
    /// function is unchanged while the depth shrinks.
    pub fn merge_identity_layers(&self) -> NeuralDecoder {
        let mut merged: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut pending: Option<DenseLayer> = None;
        for layer in &self.layers {
            let current = match pending.take() {
                Some(prev) => fuse(&prev, layer),
                None => layer.clone(),
            };
            if current.activation == Activation::Identity {
                pending = Some(current);
            } else {
                merged.push(current);
            }
        }
        if let Some(last) = pending {
            merged.push(last);
        }
        NeuralDecoder {
            layers: merged,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            l_max: self.l_max,
            eps: self.eps,
        }
    }
}

/// `next ∘ prev` where `prev` has identity activation.
fn fuse(prev: &DenseLayer, next: &DenseLayer) -> DenseLayer {
    debug_assert_eq!(prev.activation, Activation::Identity);
    let weights = next.weights.matmul(&prev.weights);
    let mut bias = next.weights.mul_vec(&prev.bias);
    for (b, nb) in bias.iter_mut().zip(&next.bias) {
        *b += nb;
    }
    DenseLayer {
        weights,
        bias,
        activation: next.activation,
        ramp: prev.ramp || next.ramp,
    }
}

/// Per-layer gradients mirroring a network's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &NeuralDecoder) -> Self {
        Self {
            weights: net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.outputs(), l.inputs()))
                .collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.outputs()])
                .collect(),
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.as_mut_slice().iter_mut().zip(ow.as_slice()) {
                *a += scale * b;
            }
        }
        for (bias, ob) in self.biases.iter_mut().zip(&other.biases) {
            for (a, b) in bias.iter_mut().zip(ob) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum();
        let b: f64 = self.biases.iter().flatten().map(|v| v * v).sum();
        (w + b).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}
