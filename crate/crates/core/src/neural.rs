//! Minimal dense-network core: forward pass, exact reverse-mode gradients
//! and a bias-corrected adaptive (Adam) optimizer. Everything runs in f64;
//! gradient-check fidelity matters more than speed at this scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("layer sizes and activations disagree")]
    BadArchitecture,
}

/// One affine layer: `out = act(W x + b)` with `W` stored row-major
/// (`out_dim` rows of `in_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// A fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network with fan-in-scaled uniform weight init and zero
    /// biases. `sizes` has one more entry than `activations`.
    pub fn new(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetError> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(NetError::BadArchitecture);
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let bound = 1.0 / (in_dim as f64).sqrt();
                Layer {
                    in_dim,
                    out_dim,
                    activation,
                    weights: (0..in_dim * out_dim)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim()];
        v.extend(self.layers.iter().map(|l| l.out_dim));
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }

    /// Affine + activation composition.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::DimMismatch { expected: self.input_dim(), got: input.len() });
        }
        let mut a = input.to_vec();
        for layer in &self.layers {
            a = layer_forward(layer, &a).0;
        }
        Ok(a)
    }

    /// Forward pass keeping pre-activations and activations for backprop.
    fn forward_cached(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut zs = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for layer in &self.layers {
            let (a, z) = layer_forward(layer, acts.last().unwrap());
            zs.push(z);
            acts.push(a);
        }
        (acts, zs)
    }

    /// Exact reverse-mode gradients of the composition.
    ///
    /// `upstream` is dL/d(output); returns the parameter gradients and
    /// dL/d(input).
    pub fn backward(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::DimMismatch { expected: self.input_dim(), got: input.len() });
        }
        if upstream.len() != self.output_dim() {
            return Err(NetError::DimMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(input, upstream, &mut grads);
        Ok((grads, input_grad))
    }

    /// Accumulating variant of [`DenseNet::backward`]: adds this sample's
    /// parameter gradients into `grads` and returns dL/d(input). Shapes
    /// must already be consistent.
    pub fn backward_into(&self, input: &[f64], upstream: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let (acts, zs) = self.forward_cached(input);
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &zs[l];
            let a_out = &acts[l + 1];
            for i in 0..layer.out_dim {
                delta[i] *= layer.activation.derivative(z[i], a_out[i]);
            }
            let a_in = &acts[l];
            let g = &mut grads.layers[l];
            for i in 0..layer.out_dim {
                let row = &mut g.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                let d = delta[i];
                for (gw, &a) in row.iter_mut().zip(a_in) {
                    *gw += d * a;
                }
                g.biases[i] += d;
            }
            // propagate: delta_in = W^T delta
            let mut next = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                let d = delta[i];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            delta = next;
        }
        delta
    }
}

#[inline]
fn layer_forward(layer: &Layer, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = layer.biases.clone();
    for i in 0..layer.out_dim {
        let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        z[i] += acc;
    }
    let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
    (a, z)
}

/// Parameter gradients shaped like a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= c);
            l.biases.iter_mut().for_each(|b| *b *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

/// Whether an optimizer step was applied or skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN/inf; parameters were left untouched.
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected adaptive update. Non-finite gradients skip the
    /// update entirely so a single bad batch cannot poison the parameters.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> StepOutcome {
        if !grads.is_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.m[l];
            let v = &mut self.v[l];
            for (i, w) in layer.weights.iter_mut().enumerate() {
                m.weights[i] = self.beta1 * m.weights[i] + (1.0 - self.beta1) * g.weights[i];
                v.weights[i] =
                    self.beta2 * v.weights[i] + (1.0 - self.beta2) * g.weights[i] * g.weights[i];
                let m_hat = m.weights[i] / bc1;
                let v_hat = v.weights[i] / bc2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            for (i, b) in layer.biases.iter_mut().enumerate() {
                m.biases[i] = self.beta1 * m.biases[i] + (1.0 - self.beta1) * g.biases[i];
                v.biases[i] =
                    self.beta2 * v.biases[i] + (1.0 - self.beta2) * g.biases[i] * g.biases[i];
                let m_hat = m.biases[i] / bc1;
                let v_hat = v.biases[i] / bc2;
                *b -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        StepOutcome::Applied
    }
}
