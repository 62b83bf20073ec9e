//! Probabilistic context encoder.
//!
//! Each transition `(s, a, r, s')` is mapped by an MLP to a diagonal Gaussian
//! factor; the posterior over the context `z` is the normalized product of the
//! factors. The query parameters are trained by gradient descent, the key
//! parameters only track them by exponential moving average.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::math;
use crate::nn::{backward_tape, forward_tape, Activation, MlpSpec, OutputActivation, ParamVector, Tape};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Lower bound added to every softplus standard deviation.
pub const STD_FLOOR: f64 = 1e-4;

pub const DEFAULT_CONTEXT_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PosteriorGaussian {
    /// `N(0, I)` in `dim` dimensions.
    pub fn unit(dim: usize) -> Self {
        PosteriorGaussian {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

impl From<GaussianFactor> for PosteriorGaussian {
    fn from(f: GaussianFactor) -> Self {
        PosteriorGaussian {
            mean: f.mean,
            std: f.std,
        }
    }
}

/// A sampled context together with the posterior and standard-normal noise
/// it was drawn with, so gradients can flow back to the posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbedding {
    pub z: Vec<f64>,
    pub posterior: PosteriorGaussian,
    pub noise: Vec<f64>,
}

impl ContextEmbedding {
    /// A context fixed to `z`, with no randomness behind it.
    pub fn fixed(z: Vec<f64>) -> Self {
        let d = z.len();
        ContextEmbedding {
            posterior: PosteriorGaussian {
                mean: z.clone(),
                std: vec![0.0; d],
            },
            z,
            noise: vec![0.0; d],
        }
    }
}

/// Precision-weighted product of diagonal Gaussian factors.
pub fn product_of_gaussians(factors: &[GaussianFactor]) -> Result<PosteriorGaussian> {
    let first = factors
        .first()
        .ok_or_else(|| Error::Usage("product of an empty factor list".into()))?;
    let d = first.mean.len();
    let mut precision = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for f in factors {
        if f.mean.len() != d || f.std.len() != d {
            return Err(Error::dim("Gaussian factor", d, f.mean.len().max(f.std.len())));
        }
        for j in 0..d {
            let p = 1.0 / (f.std[j] * f.std[j]);
            precision[j] += p;
            weighted[j] += p * f.mean[j];
        }
    }
    let mean = weighted.iter().zip(&precision).map(|(w, p)| w / p).collect();
    let std = precision.iter().map(|p| 1.0 / math::sqrt(*p)).collect();
    Ok(PosteriorGaussian { mean, std })
}

/// Pulls posterior cotangents back to every factor's mean and std.
pub fn product_of_gaussians_backward(
    factors: &[GaussianFactor],
    posterior: &PosteriorGaussian,
    d_mean: &[f64],
    d_std: &[f64],
) -> Vec<GaussianFactor> {
    let d = posterior.dim();
    let precision: Vec<f64> = posterior.std.iter().map(|s| 1.0 / (s * s)).collect();
    factors
        .iter()
        .map(|f| {
            let mut gm = vec![0.0; d];
            let mut gs = vec![0.0; d];
            for j in 0..d {
                let p_total = precision[j];
                let s = f.std[j];
                let p_i = 1.0 / (s * s);
                let dp_ds = -2.0 / (s * s * s);
                // mean = sum(p_i mu_i) / P ; std = P^(-1/2)
                let dmean_dp = (f.mean[j] - posterior.mean[j]) / p_total;
                let dstd_dp = -0.5 * posterior.std[j] / p_total;
                gm[j] = d_mean[j] * p_i / p_total;
                gs[j] = (d_mean[j] * dmean_dp + d_std[j] * dstd_dp) * dp_ds;
            }
            GaussianFactor { mean: gm, std: gs }
        })
        .collect()
}

/// Reparameterized draw `z = mean + std * eps`.
pub fn sample_z<R: Rng + ?Sized>(posterior: &PosteriorGaussian, rng: &mut R) -> ContextEmbedding {
    let noise: Vec<f64> = (0..posterior.dim()).map(|_| standard_normal(rng)).collect();
    let z = posterior
        .mean
        .iter()
        .zip(&posterior.std)
        .zip(&noise)
        .map(|((m, s), e)| m + s * e)
        .collect();
    ContextEmbedding {
        z,
        posterior: posterior.clone(),
        noise,
    }
}

/// `KL(N(mean, diag(std^2)) || N(0, I))`.
pub fn kl_to_unit_prior(posterior: &PosteriorGaussian) -> f64 {
    0.5 * posterior
        .mean
        .iter()
        .zip(&posterior.std)
        .map(|(m, s)| m * m + s * s - 1.0 - math::ln(s * s))
        .sum::<f64>()
}

/// Gradient of [`kl_to_unit_prior`] with respect to mean and std.
pub fn kl_to_unit_prior_grad(posterior: &PosteriorGaussian) -> (Vec<f64>, Vec<f64>) {
    let gm = posterior.mean.clone();
    let gs = posterior.std.iter().map(|s| s - 1.0 / s).collect();
    (gm, gs)
}

/// MLP mapping a flattened transition to `2d` raw outputs: `d` means followed
/// by `d` pre-softplus standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    pub spec: MlpSpec,
    pub context_dim: usize,
}

/// One encoded window, holding what the backward pass needs.
#[derive(Debug, Clone)]
pub struct WindowEncoding {
    tapes: Vec<Tape>,
    pub factors: Vec<GaussianFactor>,
    pub posterior: PosteriorGaussian,
}

impl ContextEncoder {
    pub fn new(transition_dim: usize, hidden: &[usize], context_dim: usize) -> Result<Self> {
        if context_dim == 0 {
            return Err(Error::Config("context dimension must be at least 1".into()));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(transition_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(2 * context_dim);
        let spec = MlpSpec::new(sizes, Activation::Tanh, OutputActivation::Identity)?;
        Ok(ContextEncoder { spec, context_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Hidden layers as [`MlpSpec::init_params`]; the output layer starts at
    /// zero, so every untrained factor is the same data-independent Gaussian.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = self.spec.init_params(rng);
        let last = self.spec.n_layers() - 1;
        let out = self.spec.layer_sizes[last + 1];
        let n_out = self.spec.layer_sizes[last] * out + out;
        let n = p.len();
        p.values_mut()[n - n_out..].iter_mut().for_each(|v| *v = 0.0);
        p
    }

    fn check(&self, params: &ParamVector, transitions: &[Transition]) -> Result<()> {
        self.spec.check_params(params)?;
        if self.spec.output_dim() != 2 * self.context_dim {
            return Err(Error::dim("encoder output", 2 * self.context_dim, self.spec.output_dim()));
        }
        for t in transitions {
            let n = 2 * t.state.len() + t.action.len() + 1;
            if n != self.input_dim() || t.next_state.len() != t.state.len() {
                return Err(Error::dim("encoder transition", self.input_dim(), n));
            }
        }
        Ok(())
    }

    fn factor_from_raw(&self, raw: &[f64]) -> GaussianFactor {
        let d = self.context_dim;
        GaussianFactor {
            mean: raw[..d].to_vec(),
            std: raw[d..].iter().map(|&r| math::softplus(r) + STD_FLOOR).collect(),
        }
    }

    /// One Gaussian factor per transition.
    pub fn encode_factors(
        &self,
        params: &ParamVector,
        transitions: &[Transition],
    ) -> Result<Vec<GaussianFactor>> {
        self.check(params, transitions)?;
        let mut input = Vec::with_capacity(self.input_dim());
        Ok(transitions
            .iter()
            .map(|t| {
                input.clear();
                t.flatten_into(&mut input);
                let tape = forward_tape(&self.spec, params.values(), &input);
                self.factor_from_raw(tape.output())
            })
            .collect())
    }

    /// Factors and their product posterior, keeping the forward tapes.
    pub fn encode(&self, params: &ParamVector, transitions: &[Transition]) -> Result<WindowEncoding> {
        self.check(params, transitions)?;
        if transitions.is_empty() {
            return Err(Error::Usage("cannot encode an empty window".into()));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        let mut tapes = Vec::with_capacity(transitions.len());
        let mut factors = Vec::with_capacity(transitions.len());
        for t in transitions {
            input.clear();
            t.flatten_into(&mut input);
            let tape = forward_tape(&self.spec, params.values(), &input);
            factors.push(self.factor_from_raw(tape.output()));
            tapes.push(tape);
        }
        let posterior = product_of_gaussians(&factors)?;
        Ok(WindowEncoding {
            tapes,
            factors,
            posterior,
        })
    }

    /// Posterior only, without keeping tapes.
    pub fn posterior(&self, params: &ParamVector, transitions: &[Transition]) -> Result<PosteriorGaussian> {
        product_of_gaussians(&self.encode_factors(params, transitions)?)
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// cotangents with respect to the posterior mean and std are given.
    pub fn backward(
        &self,
        params: &ParamVector,
        encoding: &WindowEncoding,
        d_mean: &[f64],
        d_std: &[f64],
        grad: &mut [f64],
    ) {
        let d = self.context_dim;
        let factor_grads =
            product_of_gaussians_backward(&encoding.factors, &encoding.posterior, d_mean, d_std);
        let mut cot = vec![0.0; 2 * d];
        for (tape, g) in encoding.tapes.iter().zip(&factor_grads) {
            let raw = tape.output();
            cot[..d].copy_from_slice(&g.mean);
            for j in 0..d {
                cot[d + j] = g.std[j] * math::sigmoid(raw[d + j]);
            }
            backward_tape(&self.spec, params.values(), tape, &cot, grad);
        }
    }
}

/// Query parameters and their momentum-tracked key copy, sharing one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub encoder: ContextEncoder,
    pub query_params: ParamVector,
    pub key_params: ParamVector,
}

impl EncoderPair {
    /// Fresh query parameters from [`ContextEncoder::init_params`]; the key
    /// starts as an exact copy.
    pub fn new<R: Rng + ?Sized>(encoder: ContextEncoder, rng: &mut R) -> Self {
        let query_params = encoder.init_params(rng);
        EncoderPair {
            key_params: query_params.clone(),
            query_params,
            encoder,
        }
    }

    /// `key <- m * key + (1 - m) * query`.
    pub fn ema_update(&mut self, momentum: f64) -> Result<()> {
        ema_update(self, momentum)
    }
}

/// `key <- m * key + (1 - m) * query`, elementwise; the query is untouched.
pub fn ema_update(pair: &mut EncoderPair, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum must lie in [0, 1], got {momentum}")));
    }
    if !pair.key_params.same_layout(&pair.query_params) {
        return Err(Error::Config("query and key parameter layouts differ".into()));
    }
    let rate = 1.0 - momentum;
    for (k, q) in pair
        .key_params
        .values_mut()
        .iter_mut()
        .zip(pair.query_params.values())
    {
        *k = momentum * *k + rate * q;
    }
    Ok(())
}
