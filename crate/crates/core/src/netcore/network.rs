use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's *output*.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::key("activation", format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer: `z = W x + b` with `W` of shape `[n_out x n_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        DenseLayer {
            weight: Matrix::zeros(n_out, n_in),
            bias: vec![0.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.rows()
    }

    fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Parameters of a dense feedforward classifier producing logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Gradient of a scalar loss with respect to every parameter of a
/// [`NetworkParams`]; layer shapes mirror the parameters exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

/// Post-activation outputs of every layer, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[k]` the output of hidden layer `k`.
    activations: Vec<Matrix>,
    logits: Matrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn into_logits(self) -> Matrix {
        self.logits
    }
}

impl NetworkParams {
    /// Builds a network from explicit layers, checking the shape chain.
    pub fn from_layers(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::Config(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    k,
                    pair[0].n_out(),
                    k + 1,
                    pair[1].n_in()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.n_out() {
                return Err(Error::Config(format!(
                    "layer {k} bias has {} entries, expected {}",
                    l.bias.len(),
                    l.n_out()
                )));
            }
        }
        Ok(NetworkParams { layers, activation })
    }

    /// Scaled-uniform initialization: weights in `±sqrt(6 / (n_in + n_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || classes == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut layer = DenseLayer::zeros(n_in, n_out);
                for v in layer.weight.as_mut_slice() {
                    *v = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        NetworkParams::from_layers(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// `(n_in, n_out)` per layer.
    pub fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.n_in(), l.n_out())).collect()
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Mutable views of every parameter tensor, weights before bias, layer by layer.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    /// Logits for a batch of inputs `[B x d]`.
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.forward_cached(inputs).map(ForwardCache::into_logits)
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "input width {} does not match network input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = affine(layer, &current);
            if k < last {
                for v in out.as_mut_slice() {
                    *v = self.activation.apply(*v);
                }
            }
            activations.push(current);
            current = out;
        }
        Ok(ForwardCache {
            activations,
            logits: current,
        })
    }

    /// Gradients of a loss given its gradient with respect to the logits.
    pub fn backward(&self, inputs: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let cache = self.forward_cached(inputs)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Gradients> {
        if !upstream.same_shape(&cache.logits) {
            return Err(Error::Config(format!(
                "upstream gradient is {}x{}, logits are {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.logits.rows(),
                cache.logits.cols()
            )));
        }
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.activations[k];
            let mut g = DenseLayer::zeros(layer.n_in(), layer.n_out());
            for (d_row, x_row) in delta.iter_rows().zip(input.iter_rows()) {
                for (o, &d) in d_row.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, x_row, g.weight.row_mut(o));
                        g.bias[o] += d;
                    }
                }
            }
            if k > 0 {
                let mut prev = Matrix::zeros(delta.rows(), layer.n_in());
                for b in 0..delta.rows() {
                    let d_row = delta.row(b);
                    let p_row = prev.row_mut(b);
                    for (o, &d) in d_row.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, layer.weight.row(o), p_row);
                        }
                    }
                    for (p, &a) in p_row.iter_mut().zip(input.row(b)) {
                        *p *= self.activation.derivative_from_output(a);
                    }
                }
                delta = prev;
            }
            grads.push(g);
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

fn affine(layer: &DenseLayer, inputs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(inputs.rows(), layer.n_out());
    for (b, x) in inputs.iter_rows().enumerate() {
        let row = out.row_mut(b);
        for (o, v) in row.iter_mut().enumerate() {
            *v = dot(layer.weight.row(o), x) + layer.bias[o];
        }
    }
    out
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.n_in(), l.n_out()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn has_non_finite(&self) -> bool {
        self.tensors().any(|t| t.iter().any(|v| !v.is_finite()))
    }

    pub fn matches(&self, params: &NetworkParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weight.same_shape(&p.weight) && g.bias.len() == p.bias.len())
    }
}
