//! A small fully connected classifier with exact backpropagation of
//! `log p_k` over every parameter.
//!
//! Flattened parameter layout: layers in order; within a layer, output row
//! `i` contributes `[w_i0, ..., w_i(n_in - 1), b_i]`. The last layer's block
//! is therefore exactly the row-major `C x (D + 1)` matrix that the
//! analytic last-layer gradient produces for a bias-augmented encoding.

use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{softmax, Encoding, Logits, ProbVector, Temperature};
use crate::rng::StreamRng;

use super::{aggregate, distribution, Depth, GradScoreSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative written in terms of the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidInput(format!(
                "unknown activation `{other}` (expected relu or tanh)"
            ))),
        }
    }
}

/// One affine map; `weights[i * inputs + j]` connects input `j` to output `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|i| {
                let row = &self.weights[i * self.inputs..(i + 1) * self.inputs];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.biases[i]
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroMlp {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
    activation: Activation,
    temperature: Temperature,
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpOutput {
    /// Post-activation output of the last hidden layer (the input itself
    /// when there are no hidden layers), without the bias coordinate.
    pub h: Encoding,
    pub logits: Logits,
    pub probs: ProbVector,
}

/// Intermediate values kept for the backward pass.
struct Trace {
    /// Input to each layer: `x`, then every hidden activation.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MicroMlp {
    pub fn new(layer_dims: Vec<usize>, layers: Vec<DenseLayer>, activation: Activation, temperature: Temperature) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidInput(
                "layer_dims needs at least an input and an output size".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::InvalidInput("the output layer needs at least 2 classes".into()));
        }
        if layers.len() != layer_dims.len() - 1 {
            return Err(Error::DimensionMismatch {
                what: "layer count",
                expected: layer_dims.len() - 1,
                found: layers.len(),
            });
        }
        for (l, layer) in layers.iter().enumerate() {
            let (n_in, n_out) = (layer_dims[l], layer_dims[l + 1]);
            if layer.inputs != n_in || layer.outputs != n_out {
                return Err(Error::InvalidInput(format!(
                    "layer {l} is {}x{}, layer_dims require {n_out}x{n_in}",
                    layer.outputs, layer.inputs
                )));
            }
            if layer.weights.len() != n_in * n_out {
                return Err(Error::DimensionMismatch {
                    what: "weight count",
                    expected: n_in * n_out,
                    found: layer.weights.len(),
                });
            }
            if layer.biases.len() != n_out {
                return Err(Error::DimensionMismatch {
                    what: "bias count",
                    expected: n_out,
                    found: layer.biases.len(),
                });
            }
            crate::math::check_finite("weights", &layer.weights)?;
            crate::math::check_finite("biases", &layer.biases)?;
        }
        Ok(Self {
            layer_dims,
            layers,
            activation,
            temperature,
        })
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`;
    /// zero biases.
    pub fn init(layer_dims: Vec<usize>, activation: Activation, temperature: Temperature, rng: &mut StreamRng) -> Result<Self> {
        let mut layers = Vec::with_capacity(layer_dims.len().saturating_sub(1));
        for pair in layer_dims.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            let weights = (0..n_in * n_out)
                .map(|_| -a + 2.0 * a * rng.random::<f64>())
                .collect();
            layers.push(DenseLayer {
                inputs: n_in,
                outputs: n_out,
                weights,
                biases: vec![0.0; n_out],
            });
        }
        Self::new(layer_dims, layers, activation, temperature)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// Dimension of `h` before bias augmentation.
    pub fn encoding_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Index where the last layer's block starts in the flat layout.
    pub fn last_layer_offset(&self) -> usize {
        self.parameter_count() - self.layers.last().unwrap().param_count()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            for i in 0..layer.outputs {
                out.extend_from_slice(&layer.weights[i * layer.inputs..(i + 1) * layer.inputs]);
                out.push(layer.biases[i]);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter count",
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for i in 0..layer.outputs {
                for j in 0..layer.inputs {
                    layer.weights[i * layer.inputs + j] = it.next().unwrap();
                }
                layer.biases[i] = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input dimension",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        crate::math::check_finite("input", x)
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.class_count() {
            return Err(Error::ClassIndex {
                index: k,
                class_count: self.class_count(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.hidden_layer_count());
        let (last, hidden) = self.layers.split_last().unwrap();
        for layer in hidden {
            let z = layer.affine(inputs.last().unwrap());
            let a = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        let logits = last.affine(inputs.last().unwrap());
        Trace { inputs, pre, logits }
    }

    pub fn forward(&self, x: &[f64]) -> Result<MlpOutput> {
        self.forward_at(x, self.temperature)
    }

    /// Forward pass with an explicit softmax temperature.
    pub fn forward_at(&self, x: &[f64], t: Temperature) -> Result<MlpOutput> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let logits = Logits::new(trace.logits)?;
        let probs = softmax(&logits, t);
        let h = Encoding::new(trace.inputs.into_iter().last().unwrap())?;
        Ok(MlpOutput { h, logits, probs })
    }

    /// Backpropagates an output-layer error signal `d/df` into the flat layout.
    fn backward(&self, trace: &Trace, delta_out: Vec<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.parameter_count()];
        let mut offset = self.parameter_count();
        let mut delta = delta_out;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in = &trace.inputs[l];
            offset -= layer.param_count();
            let stride = layer.inputs + 1;
            for (i, &d) in delta.iter().enumerate() {
                let row = &mut grad[offset + i * stride..offset + (i + 1) * stride];
                for (g, &a) in row.iter_mut().zip(a_in) {
                    *g = d * a;
                }
                row[layer.inputs] = d;
            }
            if l > 0 {
                let z = &trace.pre[l - 1];
                let a = &trace.inputs[l];
                delta = (0..layer.inputs)
                    .map(|j| {
                        let back: f64 = (0..layer.outputs)
                            .map(|i| layer.weights[i * layer.inputs + j] * delta[i])
                            .sum();
                        back * self.activation.derivative(z[j], a[j])
                    })
                    .collect();
            }
        }
        grad
    }

    /// `grad_theta log p_k(x)` in the flat layout, at the model temperature.
    pub fn grad_logp(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        self.grad_logp_at(x, k, self.temperature)
    }

    pub fn grad_logp_at(&self, x: &[f64], k: usize, t: Temperature) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_class(k)?;
        let trace = self.trace(x);
        let p = softmax(&Logits::new(trace.logits.clone())?, t);
        Ok(self.backward(&trace, output_delta(&p, k, t)))
    }

    /// One forward pass and `C` backward passes: `grad log p_k` for every `k`.
    pub fn per_class_grads(&self, x: &[f64], t: Temperature) -> Result<(MlpOutput, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let logits = Logits::new(trace.logits.clone())?;
        let probs = softmax(&logits, t);
        let grads = (0..self.class_count())
            .map(|k| self.backward(&trace, output_delta(&probs, k, t)))
            .collect();
        let h = Encoding::new(trace.inputs.last().unwrap().clone())?;
        Ok((MlpOutput { h, logits, probs }, grads))
    }

    /// Cross-entropy gradient and loss for one labelled sample, without
    /// validating finiteness (training checks the loss itself).
    pub(crate) fn loss_grad(&self, x: &[f64], label: usize) -> (f64, Vec<f64>) {
        let trace = self.trace(x);
        let t = self.temperature.get();
        let m = trace.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: Vec<f64> = trace.logits.iter().map(|v| (v - m) / t).collect();
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        let delta = z
            .iter()
            .enumerate()
            .map(|(j, v)| ((v - lse).exp() - if j == label { 1.0 } else { 0.0 }) / t)
            .collect();
        (loss, self.backward(&trace, delta))
    }
}

/// `d log p_k / d f_j = (1[j = k] - p_j) / T`.
fn output_delta(p: &ProbVector, k: usize, t: Temperature) -> Vec<f64> {
    p.as_slice()
        .iter()
        .enumerate()
        .map(|(j, &pj)| (if j == k { p.complement(k) } else { -pj }) / t.get())
        .collect()
}

/// Evaluates a deep gradient score: the spec's aggregation over full
/// flattened gradients, one backward pass per class.
pub fn deep_grad_score(m: &MicroMlp, x: &[f64], spec: &GradScoreSpec) -> Result<f64> {
    spec.validate()?;
    if spec.depth != Depth::Deep {
        return Err(Error::InvalidSpec("deep evaluation needs a deep spec".into()));
    }
    let (out, grads) = m.per_class_grads(x, spec.temperature)?;
    let (p, log_p) = distribution(&out.logits, spec.temperature);
    Ok(aggregate(spec, &grads, &p, &log_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{last_layer_grad_logp, shallow_grad_score, weighted_sum};
    use crate::rng::{stream, Purpose};

    fn net(dims: &[usize], act: Activation, seed: u64) -> MicroMlp {
        let mut rng = stream(seed, Purpose::Init);
        let mut m = MicroMlp::init(dims.to_vec(), act, Temperature::ONE, &mut rng).unwrap();
        // nonzero biases so the bias path is exercised
        let p: Vec<f64> = m.parameters().iter().enumerate().map(|(i, v)| v + 0.01 * (i % 7) as f64).collect();
        m.set_parameters(&p).unwrap();
        m
    }

    #[test]
    fn identity_linear_layer() {
        let layer = DenseLayer {
            inputs: 3,
            outputs: 3,
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            biases: vec![0.0; 3],
        };
        let m = MicroMlp::new(vec![3, 3], vec![layer], Activation::Relu, Temperature::ONE).unwrap();
        let out = m.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out.logits.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(out.h.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut m = net(&[4, 5, 3], Activation::Tanh, 1);
        m.set_parameters(&vec![0.0; m.parameter_count()]).unwrap();
        let out = m.forward(&[0.3, -1.0, 2.0, 5.0]).unwrap();
        for &p in out.probs.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_probs_are_softmax_of_logits() {
        let m = net(&[4, 6, 6, 3], Activation::Relu, 2);
        let out = m.forward(&[0.5, -0.1, 1.5, 0.2]).unwrap();
        let p = softmax(&out.logits, Temperature::ONE);
        for (a, b) in out.probs.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn dimension_and_class_checks() {
        let m = net(&[4, 6, 3], Activation::Relu, 3);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 4, found: 2, .. })));
        assert!(matches!(m.grad_logp(&[0.0; 4], 3), Err(Error::ClassIndex { .. })));
        let bad = DenseLayer {
            inputs: 2,
            outputs: 2,
            weights: vec![0.0; 3],
            biases: vec![0.0; 2],
        };
        assert!(MicroMlp::new(vec![2, 2], vec![bad], Activation::Relu, Temperature::ONE).is_err());
    }

    #[test]
    fn last_layer_block_matches_analytic_gradient() {
        let m = net(&[5, 7, 6, 4], Activation::Tanh, 4);
        let x = [0.2, -0.7, 1.1, 0.0, 0.4];
        let out = m.forward(&x).unwrap();
        let h = out.h.augmented();
        for k in 0..4 {
            let full = m.grad_logp(&x, k).unwrap();
            let block = &full[m.last_layer_offset()..];
            let analytic = last_layer_grad_logp(&h, &out.probs, k, Temperature::ONE).unwrap();
            assert_eq!(block.len(), analytic.as_slice().len());
            for (a, b) in block.iter().zip(analytic.as_slice()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn expectation_identity_at_depth() {
        let m = net(&[5, 8, 8, 4], Activation::Relu, 5);
        let x = [1.0, -0.5, 0.25, 2.0, -1.5];
        let (out, grads) = m.per_class_grads(&x, Temperature::ONE).unwrap();
        let e = weighted_sum(&grads, out.probs.as_slice());
        assert!(e.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn central_differences_agree() {
        for act in [Activation::Relu, Activation::Tanh] {
            let m = net(&[3, 5, 4, 3], act, 6);
            let x = [0.7, -0.3, 1.2];
            let base = m.parameters();
            for k in 0..3 {
                let g = m.grad_logp(&x, k).unwrap();
                for i in (0..base.len()).step_by(3) {
                    let fd = central_difference(&m, &base, i, &x, k, 1e-5);
                    if g[i].abs() > 1e-8 {
                        assert!((g[i] - fd).abs() <= 1e-4 * g[i].abs(), "{act} k={k} i={i}: {} vs {fd}", g[i]);
                    }
                }
            }
        }
    }

    fn central_difference(m: &MicroMlp, base: &[f64], i: usize, x: &[f64], k: usize, step: f64) -> f64 {
        let eval = |delta: f64| {
            let mut p = base.to_vec();
            p[i] += delta;
            let mut probe = m.clone();
            probe.set_parameters(&p).unwrap();
            let out = probe.forward(x).unwrap();
            crate::math::log_softmax(&out.logits, Temperature::ONE)[k]
        };
        (eval(step) - eval(-step)) / (2.0 * step)
    }

    #[test]
    fn no_hidden_layer_deep_equals_shallow() {
        let m = net(&[4, 3], Activation::Relu, 7);
        let x = [0.5, -1.0, 2.0, 0.1];
        let out = m.forward(&x).unwrap();
        let h = Encoding::with_bias(x.to_vec()).unwrap();
        for (deep, shallow) in [
            (GradScoreSpec::gradnorm(Depth::Deep), GradScoreSpec::gradnorm(Depth::Shallow)),
            (GradScoreSpec::exgrad(Depth::Deep), GradScoreSpec::exgrad(Depth::Shallow)),
        ] {
            let a = deep_grad_score(&m, &x, &deep).unwrap();
            let b = shallow_grad_score(&h, &out.logits, &shallow).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn parameter_round_trip() {
        let m = net(&[3, 4, 2], Activation::Tanh, 8);
        let mut n = m.clone();
        n.set_parameters(&m.parameters()).unwrap();
        assert_eq!(m, n);
        assert_eq!(m.parameter_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(m.last_layer_offset(), 16);
    }
}
