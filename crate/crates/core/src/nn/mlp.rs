//! Dense multi-layer perceptron with ReLU hidden layers and a linear head.
//!
//! Weights are stored `(out, in)` so a batch `X` of shape `(B, in)` maps to
//! `X · Wᵀ + b`. Backward passes return *sums* over the batch of the
//! upstream-gradient-weighted outputs; the mean-over-batch convention lives in
//! the loss gradients, which already carry the `1/N` factor.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weights and biases of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter gradients, shape-congruent with the [`MlpParams`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations cached by [`MlpParams::forward_trace`] for a later backward pass.
///
/// `activations[0]` is the input batch and `activations[l + 1]` the output of
/// layer `l` (after ReLU for hidden layers, raw for the head).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }
}

/// Result of a full backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    /// Gradient with respect to the network input, shape `(B, in)`.
    pub input_grad: Array2<f64>,
}

fn check_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "an MLP needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Build a network with uniform(±1/√fan_in) weights and zero biases.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    MlpParams::init(layer_sizes, seed)
}

/// Batched forward pass, see [`MlpParams::forward`].
pub fn mlp_forward(params: &MlpParams, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    params.forward(inputs)
}

/// Parameter gradients of `Σ_b Σ_j output_grad[b, j] · f(inputs)[b, j]`.
pub fn mlp_backward(
    params: &MlpParams,
    inputs: ArrayView2<'_, f64>,
    output_grad: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let trace = params.forward_trace(inputs)?;
    Ok(params.backward(&trace, output_grad)?.grads)
}

impl MlpParams {
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Checks the structural invariants: layer count, per-layer shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        check_layer_sizes(&self.layer_sizes)?;
        let n = self.layer_sizes.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::shape(format!(
                "expected {n} weight matrices and bias vectors, got {} and {}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..n {
            let expect = (self.layer_sizes[l + 1], self.layer_sizes[l]);
            if self.weights[l].dim() != expect {
                return Err(Error::shape(format!(
                    "layer {l} weight has shape {:?}, expected {expect:?}",
                    self.weights[l].dim()
                )));
            }
            if self.biases[l].len() != expect.0 {
                return Err(Error::shape(format!(
                    "layer {l} bias has length {}, expected {}",
                    self.biases[l].len(),
                    expect.0
                )));
            }
            if self.weights[l].iter().chain(self.biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Hidden layers use ReLU; the last layer is linear.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let last = self.num_layers() - 1;
        let mut h = affine(inputs, &self.weights[0], &self.biases[0]);
        if last > 0 {
            relu_inplace(&mut h);
        }
        for l in 1..=last {
            h = affine(h.view(), &self.weights[l], &self.biases[l]);
            if l < last {
                relu_inplace(&mut h);
            }
        }
        Ok(h)
    }

    /// Forward pass that keeps every layer's activation.
    pub fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_input(&inputs)?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(inputs.to_owned());
        for l in 0..=last {
            let mut h = affine(activations[l].view(), &self.weights[l], &self.biases[l]);
            if l < last {
                relu_inplace(&mut h);
            }
            activations.push(h);
        }
        Ok(ForwardTrace { activations })
    }

    /// Backpropagates `output_grad` through the activations in `trace`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<Backward> {
        let out = trace.output();
        if output_grad.dim() != out.dim() || trace.activations.len() != self.num_layers() + 1 {
            return Err(Error::shape(format!(
                "output gradient has shape {:?}, forward output is {:?}",
                output_grad.dim(),
                out.dim()
            )));
        }
        let n = self.num_layers();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut delta = output_grad.to_owned();
        for l in (0..n).rev() {
            let prev = &trace.activations[l];
            dw.push(delta.t().dot(prev).as_standard_layout().into_owned());
            db.push(delta.sum_axis(Axis(0)));
            let mut d_prev = delta.dot(&self.weights[l]);
            if l > 0 {
                // ReLU mask: activations[l] is post-ReLU, so zero entries were clipped.
                Zip::from(&mut d_prev).and(prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_prev;
        }
        dw.reverse();
        db.reverse();
        Ok(Backward {
            grads: Gradients {
                weights: dw,
                biases: db,
            },
            input_grad: delta,
        })
    }

    /// Polyak averaging: `self ← tau · online + (1 − tau) · self`.
    pub fn soft_update_from(&mut self, online: &MlpParams, tau: f64) {
        for (t, o) in self.weights.iter_mut().zip(&online.weights) {
            Zip::from(t).and(o).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        for (t, o) in self.biases.iter_mut().zip(&online.biases) {
            Zip::from(t).and(o).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`].
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let expected: usize = layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        if flat.len() != expected {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, layer sizes {layer_sizes:?} need {expected}",
                flat.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut pos = 0;
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = Array2::from_shape_vec((fan_out, fan_in), flat[pos..pos + fan_in * fan_out].to_vec())
                .map_err(|e| Error::shape(e.to_string()))?;
            pos += fan_in * fan_out;
            let b = Array1::from(flat[pos..pos + fan_out].to_vec());
            pos += fan_out;
            weights.push(w);
            biases.push(b);
        }
        let params = Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        };
        params.validate()?;
        Ok(params)
    }
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn is_congruent_with(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self.weights.iter().zip(&params.weights).all(|(g, w)| g.dim() == w.dim())
            && self.biases.iter().zip(&params.biases).all(|(g, b)| g.len() == b.len())
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn affine(x: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut h = x.dot(&w.t());
    h += b;
    h
}

fn relu_inplace(h: &mut Array2<f64>) {
    h.mapv_inplace(|v| v.max(0.0));
}
