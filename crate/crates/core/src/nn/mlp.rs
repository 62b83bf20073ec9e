use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayoutEntry, ParamVector};
use crate::math;
use crate::{Error, Result};

/// Nonlinearity between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Nonlinearity applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Softplus,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least two layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("MLP layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `l{k}.weight` is `[out, in]` row-major, followed by `l{k}.bias`.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for (k, w) in self.layer_sizes.windows(2).enumerate() {
            out.push(LayoutEntry::new(format!("l{k}.weight"), vec![w[1], w[0]]));
            out.push(LayoutEntry::new(format!("l{k}.bias"), vec![w[1]]));
        }
        out
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout())
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = self.zero_params();
        let v = p.values_mut();
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / math::sqrt(fan_in as f64);
            for x in &mut v[offset..offset + fan_in * fan_out] {
                *x = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        p
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::dim("MLP parameters", self.n_params(), params.len()));
        }
        if params.layout() != self.layout().as_slice() {
            return Err(Error::Config("parameter layout does not match MLP spec".into()));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, consumed by [`backward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `post[0]` is the input; `post[k + 1]` is the output of layer `k`.
    post: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }

    pub fn input(&self) -> &[f64] {
        &self.post[0]
    }
}

fn hidden(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => math::tanh(x),
        Activation::Identity => x,
    }
}

fn hidden_grad(act: Activation, pre: f64, post: f64) -> f64 {
    match act {
        Activation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - post * post,
        Activation::Identity => 1.0,
    }
}

fn output(act: OutputActivation, x: f64) -> f64 {
    match act {
        OutputActivation::Identity => x,
        OutputActivation::Softplus => math::softplus(x),
        OutputActivation::Tanh => math::tanh(x),
    }
}

fn output_grad(act: OutputActivation, pre: f64, post: f64) -> f64 {
    match act {
        OutputActivation::Identity => 1.0,
        OutputActivation::Softplus => math::sigmoid(pre),
        OutputActivation::Tanh => 1.0 - post * post,
    }
}

/// Unchecked forward pass over raw parameters. Callers guarantee shapes.
pub fn forward_tape(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Tape {
    debug_assert_eq!(params.len(), spec.n_params());
    debug_assert_eq!(input.len(), spec.input_dim());
    let n_layers = spec.n_layers();
    let mut post = Vec::with_capacity(n_layers + 1);
    let mut pre = Vec::with_capacity(n_layers);
    post.push(input.to_vec());
    let mut offset = 0;
    for (k, w) in spec.layer_sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let x = &post[k];
        let z: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let h = if k + 1 == n_layers {
            z.iter().map(|&v| output(spec.output_activation, v)).collect()
        } else {
            z.iter().map(|&v| hidden(spec.activation, v)).collect()
        };
        pre.push(z);
        post.push(h);
    }
    Tape { post, pre }
}

/// Accumulates the parameter vector-Jacobian product into `grad_params` and
/// returns the input gradient.
pub fn backward_tape(
    spec: &MlpSpec,
    params: &[f64],
    tape: &Tape,
    cotangent: &[f64],
    grad_params: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(grad_params.len(), spec.n_params());
    backward_impl(spec, params, tape, cotangent, Some(grad_params))
}

/// Input gradient only; parameter gradients are not formed.
pub fn input_gradient(spec: &MlpSpec, params: &[f64], tape: &Tape, cotangent: &[f64]) -> Vec<f64> {
    backward_impl(spec, params, tape, cotangent, None)
}

fn backward_impl(
    spec: &MlpSpec,
    params: &[f64],
    tape: &Tape,
    cotangent: &[f64],
    mut grad_params: Option<&mut [f64]>,
) -> Vec<f64> {
    debug_assert_eq!(cotangent.len(), spec.output_dim());
    let n_layers = spec.n_layers();
    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for w in spec.layer_sizes.windows(2) {
        offsets.push(offset);
        offset += w[0] * w[1] + w[1];
    }
    let last = n_layers - 1;
    let mut delta: Vec<f64> = cotangent
        .iter()
        .zip(&tape.pre[last])
        .zip(&tape.post[last + 1])
        .map(|((c, &z), &h)| c * output_grad(spec.output_activation, z, h))
        .collect();
    for k in (0..n_layers).rev() {
        let n_in = spec.layer_sizes[k];
        let n_out = spec.layer_sizes[k + 1];
        let off = offsets[k];
        let x = &tape.post[k];
        if let Some(grad_params) = grad_params.as_deref_mut() {
            let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        let weights = &params[off..off + n_in * n_out];
        let mut prev = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                *p += d * w;
            }
        }
        if k > 0 {
            for ((p, &z), &h) in prev.iter_mut().zip(&tape.pre[k - 1]).zip(&tape.post[k]) {
                *p *= hidden_grad(spec.activation, z, h);
            }
        }
        delta = prev;
    }
    delta
}

pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    if input.len() != spec.input_dim() {
        return Err(Error::dim("mlp_forward input", spec.input_dim(), input.len()));
    }
    let tape = forward_tape(spec, params.values(), input);
    Ok(tape.post.into_iter().last().unwrap())
}

/// Reverse-mode derivative of [`mlp_forward`]: gradients with respect to the
/// parameters and the input for the given output cotangent.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    output_cotangent: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    spec.check_params(params)?;
    if input.len() != spec.input_dim() {
        return Err(Error::dim("mlp_backward input", spec.input_dim(), input.len()));
    }
    if output_cotangent.len() != spec.output_dim() {
        return Err(Error::dim(
            "mlp_backward cotangent",
            spec.output_dim(),
            output_cotangent.len(),
        ));
    }
    let tape = forward_tape(spec, params.values(), input);
    let mut grad = params.zeros_like();
    let input_grad = backward_tape(spec, params.values(), &tape, output_cotangent, grad.values_mut());
    Ok((grad, input_grad))
}
